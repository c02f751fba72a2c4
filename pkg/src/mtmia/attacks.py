"""Membership scoring: embedding-space DCR and single-table baselines.

Every score is oriented so that larger means "more likely a member".
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .hgnn import SPACES, EncoderParams, embed
from .relgraph import EntitySubgraph

RAW_ROW = "raw-row"


@dataclass
class AttackScoreSet:
    ids: list
    scores: np.ndarray
    attack: str
    space: str
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.ids) != len(self.scores):
            raise ValueError("ids and scores differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("entity ids must be unique")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"{self.attack}/{self.space}: non-finite scores")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    def with_labels(self, labels) -> "AttackScoreSet":
        return AttackScoreSet(list(self.ids), self.scores.copy(), self.attack, self.space, labels)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["entity_id", "attack", "space", "score", "label"])
            for i, (eid, s) in enumerate(zip(self.ids, self.scores)):
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([eid, self.attack, self.space, repr(float(s)), label])


def concat_scores(parts: list) -> AttackScoreSet:
    labels = None
    if all(p.labels is not None for p in parts):
        labels = np.concatenate([p.labels for p in parts])
    return AttackScoreSet(
        [i for p in parts for i in p.ids], np.concatenate([p.scores for p in parts]),
        parts[0].attack, parts[0].space, labels,
    )


def _check(queries, synth):
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    s = np.atleast_2d(np.asarray(synth, dtype=np.float64))
    if s.shape[0] == 0:
        raise ValueError("synthetic set is empty")
    if q.shape[1] != s.shape[1]:
        raise ValueError(f"dimension mismatch: queries {q.shape[1]} vs synthetic {s.shape[1]}")
    return q, s


def _ids(ids, n):
    return [str(i) for i in range(n)] if ids is None else list(ids)


def dcr_score(queries, synth, ids=None, space: str = RAW_ROW) -> AttackScoreSet:
    """Negative L2 distance to the closest synthetic vector."""
    q, s = _check(queries, synth)
    scores = 0.0 - np.sqrt(_kernels.min_sq_dist(q, s))
    return AttackScoreSet(_ids(ids, len(q)), scores, "dcr", space)


def default_mc_radius(synth) -> float:
    """Median distance from each synthetic row to its nearest other row."""
    s = np.atleast_2d(np.asarray(synth, dtype=np.float64))
    if s.shape[0] < 2:
        raise ValueError("MC radius heuristic needs at least two synthetic rows")
    return float(np.median(np.sqrt(_kernels.nn_sq_dist_excluding_self(s))))


def mc_score(queries, synth, radius: float | None = None, ids=None, space: str = RAW_ROW) -> AttackScoreSet:
    """Fraction of synthetic rows within ``radius`` of the query."""
    q, s = _check(queries, synth)
    if radius is None:
        radius = default_mc_radius(s)
    counts = _kernels.ball_count(q, s, radius)
    return AttackScoreSet(_ids(ids, len(q)), counts / s.shape[0], "mc", space)


def default_bandwidth(synth) -> np.ndarray:
    """Scott-style per-dimension bandwidth, floored at 1e-6."""
    s = np.atleast_2d(np.asarray(synth, dtype=np.float64))
    n, d = s.shape
    sd = s.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    if not np.any(sd > 0):
        raise ValueError("degenerate density: synthetic data is constant in every dimension")
    return np.maximum(sd * n ** (-1.0 / (d + 4)), 1e-6)


def kde_score(queries, synth, bandwidth=None, ids=None, space: str = RAW_ROW) -> AttackScoreSet:
    """Log of the mean product-Gaussian kernel over synthetic rows."""
    q, s = _check(queries, synth)
    n, d = s.shape
    h = default_bandwidth(s) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (d,))
    log_norm = -0.5 * d * np.log(2 * np.pi) - np.sum(np.log(h))
    scores = _kernels.gauss_logsumexp(q, s, 1.0 / h) + log_norm - np.log(n)
    return AttackScoreSet(_ids(ids, len(q)), scores, "kde", space)


BASELINES = {"dcr": dcr_score, "mc": mc_score, "kde": kde_score}


def extract_parent_row(sub: EntitySubgraph) -> np.ndarray:
    t, i = sub.root
    return sub.graph.features[t][i].copy()


def parent_rows(subgraphs) -> np.ndarray:
    if not subgraphs:
        return np.zeros((0, 0))
    return np.stack([extract_parent_row(s) for s in subgraphs])


def baseline_entity_score(attack: str, queries, synth, **kw) -> AttackScoreSet:
    """Single-table attack on the root row of each entity subgraph."""
    fn = BASELINES[attack]
    return fn(parent_rows(queries), parent_rows(synth), ids=[q.entity_id for q in queries], **kw)


def child_table_score(attack: str, queries, synth_graph, table: str, **kw) -> AttackScoreSet:
    """Attack each child row of ``table`` independently; an entity's score is
    the maximum over its rows. Entities without such rows get the lowest
    row score observed."""
    fn = BASELINES[attack]
    synth_rows = synth_graph.features[table]
    owners, rows = [], []
    for k, q in enumerate(queries):
        idx = q.nodes[table]
        rows.append(q.graph.features[table][idx])
        owners.append(np.full(len(idx), k))
    X = np.concatenate(rows) if rows else np.zeros((0, synth_rows.shape[1]))
    owner = np.concatenate(owners).astype(np.int64) if owners else np.zeros(0, dtype=np.int64)
    row_scores = fn(X, synth_rows, **kw).scores if len(X) else np.zeros(0)
    floor = row_scores.min() if len(row_scores) else 0.0
    ent = np.full(len(queries), -np.inf)
    np.maximum.at(ent, owner, row_scores)
    ent[~np.isfinite(ent)] = floor
    return AttackScoreSet([q.entity_id for q in queries], ent, attack, f"child:{table}")


def mtmia_score(params: EncoderParams, queries, synth, space: str = "final", synth_embeddings: dict | None = None) -> AttackScoreSet:
    """DCR in the encoder's embedding space: ``-min_h ||M(h*) - M(h)||``."""
    if space not in SPACES:
        raise ValueError(f"unknown embedding space {space!r}")
    if not synth:
        raise ValueError("synthetic set is empty")
    if synth_embeddings is None:
        synth_embeddings = embed(params, synth)
    q = embed(params, queries)[space]
    res = dcr_score(q, synth_embeddings[space], ids=[s.entity_id for s in queries], space=space)
    res.attack = "mtmia"
    return res

