"""Attack-success metrics and multi-table fidelity metrics."""
from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .relgraph import NUMERIC, Database, HeteroGraph, RelationalSchema

log = logging.getLogger(__name__)

FPR_LEVELS = (0.0, 1e-3, 1e-2)


# ---------------------------------------------------------------------------
# attack success
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    auc: float
    tpr_at_fpr: dict
    roc: list
    n_members: int
    n_nonmembers: int
    u_statistic: float

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "tpr_at_fpr": {repr(k): v for k, v in self.tpr_at_fpr.items()},
            "n_members": self.n_members,
            "n_nonmembers": self.n_nonmembers,
            "u_statistic": self.u_statistic,
            "roc": [list(p) for p in self.roc],
        }

    def write_roc_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, thr in self.roc:
                w.writerow([repr(float(fpr)), repr(float(tpr)), repr(float(thr))])


def mann_whitney_u(pos: np.ndarray, neg: np.ndarray) -> float:
    """Number of (member, nonmember) pairs ranked correctly, ties counting 1/2."""
    neg_sorted = np.sort(neg)
    lo = np.searchsorted(neg_sorted, pos, side="left")
    hi = np.searchsorted(neg_sorted, pos, side="right")
    twice = 2 * int(lo.sum()) + int((hi - lo).sum())
    return twice / 2.0


def roc_points(pos: np.ndarray, neg: np.ndarray) -> list:
    """(fpr, tpr, threshold) for the rule ``score >= threshold``, starting at (0, 0, inf)."""
    thr = np.unique(np.concatenate([pos, neg]))[::-1]
    ps, ns = np.sort(pos), np.sort(neg)
    tp = len(ps) - np.searchsorted(ps, thr, side="left")
    fp = len(ns) - np.searchsorted(ns, thr, side="left")
    pts = [(0.0, 0.0, float("inf"))]
    pts += [(fp[i] / len(ns), tp[i] / len(ps), float(thr[i])) for i in range(len(thr))]
    return pts


def roc_and_auc(scores, labels=None, fpr_levels=FPR_LEVELS) -> EvalReport:
    """AUC (Mann-Whitney) and TPR at each FPR budget from labelled scores.

    Accepts an AttackScoreSet with labels, or a score array plus labels
    (1 = member).
    """
    if labels is None:
        labels = scores.labels
        scores = scores.scores
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("roc_and_auc needs both members and nonmembers")
    u = mann_whitney_u(pos, neg)
    auc = u / (len(pos) * len(neg))
    pts = roc_points(pos, neg)
    tpr_at = {}
    for a in fpr_levels:
        tpr_at[a] = float(max(t for f, t, _ in pts if f <= a))
    return EvalReport(float(auc), tpr_at, pts, int(len(pos)), int(len(neg)), u)


# ---------------------------------------------------------------------------
# fidelity primitives
# ---------------------------------------------------------------------------


def ks_complement(real, synth) -> float:
    """1 - sup_x |F_real(x) - F_synth(x)| over the two empirical CDFs."""
    a = np.sort(np.asarray(real, dtype=np.float64))
    b = np.sort(np.asarray(synth, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("ks_complement needs non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(1.0 - np.max(np.abs(fa - fb)))


def tv_complement(real, synth) -> float:
    """1 - total variation distance between two empirical category distributions."""
    r = pd.Series(list(real), dtype=object).value_counts(normalize=True)
    s = pd.Series(list(synth), dtype=object).value_counts(normalize=True)
    if len(r) == 0 or len(s) == 0:
        raise ValueError("tv_complement needs non-empty samples")
    cats = r.index.union(s.index)
    diff = (r.reindex(cats, fill_value=0.0) - s.reindex(cats, fill_value=0.0)).abs().sum()
    return float(1.0 - 0.5 * diff)


def avg_hop(hop_scores: dict) -> float:
    if not hop_scores:
        raise ValueError("avg_hop needs at least one hop score")
    return float(np.mean(list(hop_scores.values())))


# ---------------------------------------------------------------------------
# multi-table fidelity
# ---------------------------------------------------------------------------


@dataclass
class FidelityReport:
    one_way: float
    cardinality: float
    hops: dict
    avg_hop: float | None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hops"] = {str(k): v for k, v in self.hops.items()}
        return d


def one_way(schema: RelationalSchema, real: Database, synth: Database, detail: dict | None = None) -> float:
    """Mean per-column marginal agreement (KS for numeric, TV for categorical)."""
    scores = []
    for t in schema.tables:
        if len(real[t.name]) == 0 or len(synth[t.name]) == 0:
            log.warning("table %r is empty in one database; its columns are skipped", t.name)
            continue
        for c in t.feature_columns:
            r, s = real[t.name][c.name].dropna(), synth[t.name][c.name].dropna()
            if len(r) == 0 or len(s) == 0:
                log.warning("column %s.%s has no values in one database; skipped", t.name, c.name)
                continue
            score = ks_complement(r, s) if c.kind == NUMERIC else tv_complement(r.astype(str), s.astype(str))
            scores.append(score)
            if detail is not None:
                detail[f"{t.name}.{c.name}"] = score
    if not scores:
        raise ValueError("no comparable columns")
    return float(np.mean(scores))


def _children_per_parent(graph: HeteroGraph, rel) -> np.ndarray:
    parent = rel[2]
    e = graph.edges.get(rel)
    n = graph.num_nodes[parent]
    if e is None:
        return np.zeros(n, dtype=np.int64)
    return np.bincount(e[1], minlength=n)


def cardinality_fidelity(schema: RelationalSchema, real: HeteroGraph, synth: HeteroGraph, detail: dict | None = None) -> float:
    """Mean KS complement of children-per-parent counts over FK relations."""
    rels = schema.relations()
    if not rels:
        raise ValueError("cardinality fidelity needs at least one foreign key")
    scores = []
    for rel in rels:
        name = f"{rel[0]}.{rel[1]}->{rel[2]}"
        rc = _children_per_parent(real, rel)
        if rel not in synth.edges or synth.num_nodes[rel[2]] == 0 or len(rc) == 0:
            log.warning("relation %s absent from synthetic data; scored 0", name)
            score = 0.0
        else:
            score = ks_complement(rc, _children_per_parent(synth, rel))
        scores.append(score)
        if detail is not None:
            detail[name] = score
    return float(np.mean(scores))


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def _column_pairs(schema: RelationalSchema, db: Database, graph: HeteroGraph, k: int) -> list:
    """[(pair name, kind_a, kind_b, values_a, values_b)] for hop distance k."""
    out = []
    if k == 0:
        for t in schema.tables:
            df = db[t.name]
            for a, b in itertools.combinations(t.feature_columns, 2):
                out.append((f"{t.name}.{a.name}~{t.name}.{b.name}", a, b, df[a.name], df[b.name]))
    elif k == 1:
        for rel in schema.relations():
            child, col, parent = rel
            e = graph.edges[rel]
            cdf = db[child].iloc[e[0]].reset_index(drop=True)
            pdf = db[parent].iloc[e[1]].reset_index(drop=True)
            for a in schema.table(child).feature_columns:
                for b in schema.table(parent).feature_columns:
                    out.append((f"{child}.{a.name}~{parent}.{b.name}", a, b, cdf[a.name], pdf[b.name]))
    else:
        raise ValueError("only k in {0, 1} is supported")
    return out


def khop_correlation(schema: RelationalSchema, real_db: Database, real_graph: HeteroGraph,
                     synth_db: Database, synth_graph: HeteroGraph, k: int, detail: dict | None = None) -> float | None:
    """Mean agreement of column-pair dependence at hop distance ``k``.

    Numeric pairs: ``1 - |rho_real - rho_synth| / 2`` (Pearson). Categorical
    pairs: TV complement of the joint distribution. Mixed pairs and pairs
    with a constant column are skipped. Returns None if no pair qualifies.
    """
    real_pairs = _column_pairs(schema, real_db, real_graph, k)
    synth_pairs = {p[0]: p for p in _column_pairs(schema, synth_db, synth_graph, k)}
    scores = []
    for name, a, b, ra, rb in real_pairs:
        _, _, _, sa, sb = synth_pairs[name]
        if a.kind != b.kind:
            if detail is not None:
                detail[name] = "skipped: mixed types"
            continue
        if a.kind == NUMERIC:
            rm, sm = ra.notna() & rb.notna(), sa.notna() & sb.notna()
            rho_r = _pearson(ra[rm].to_numpy(float), rb[rm].to_numpy(float))
            rho_s = _pearson(sa[sm].to_numpy(float), sb[sm].to_numpy(float))
            if rho_r is None or rho_s is None:
                log.warning("pair %s has a zero-variance column; skipped", name)
                if detail is not None:
                    detail[name] = "skipped: zero variance"
                continue
            score = 1.0 - abs(rho_r - rho_s) / 2.0
        else:
            if len(ra) == 0 or len(sa) == 0:
                continue
            score = tv_complement(
                list(zip(ra.astype(str), rb.astype(str))), list(zip(sa.astype(str), sb.astype(str)))
            )
        scores.append(score)
        if detail is not None:
            detail[name] = score
    return float(np.mean(scores)) if scores else None


def fidelity_report(schema: RelationalSchema, real_db: Database, real_graph: HeteroGraph,
                    synth_db: Database, synth_graph: HeteroGraph) -> FidelityReport:
    detail = {"one_way": {}, "cardinality": {}, "hop0": {}, "hop1": {}}
    ow = one_way(schema, real_db, synth_db, detail["one_way"])
    card = cardinality_fidelity(schema, real_graph, synth_graph, detail["cardinality"])
    hops = {}
    for k in (0, 1):
        v = khop_correlation(schema, real_db, real_graph, synth_db, synth_graph, k, detail[f"hop{k}"])
        if v is not None:
            hops[k] = v
    return FidelityReport(ow, card, hops, avg_hop(hops) if hops else None, detail)


def write_json_report(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
