"""Feature encodings fitted on synthetic data only.

Numeric columns are standardised with the synthetic mean and sample (n-1)
standard deviation. Categorical columns get ordinal codes from the sorted
synthetic categories, scaled into [0, 1]; a real value never seen in the
synthetic data maps one past the last code.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .relgraph import CATEGORICAL, NUMERIC, Database, RelationalSchema

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NumericEncoding:
    mean: float
    std: float
    std_fallback: bool = False


@dataclass(frozen=True)
class CategoricalEncoding:
    categories: tuple

    @property
    def scale(self) -> float:
        return float(max(1, len(self.categories) - 1))

    def code(self, value) -> int:
        try:
            return self._index[value]
        except KeyError:
            return len(self.categories)

    @cached_property
    def _index(self) -> dict:
        return {c: i for i, c in enumerate(self.categories)}


@dataclass(frozen=True)
class EncodingSpec:
    schema: RelationalSchema = field(repr=False)
    columns: dict  # (table, column) -> NumericEncoding | CategoricalEncoding

    def to_dict(self) -> dict:
        out = {}
        for (t, c), enc in self.columns.items():
            if isinstance(enc, NumericEncoding):
                d = {"kind": NUMERIC, "mean": enc.mean, "std": enc.std, "std_fallback": enc.std_fallback}
            else:
                d = {"kind": CATEGORICAL, "categories": list(enc.categories)}
            out.setdefault(t, {})[c] = d
        return out


def fit_encoding(schema: RelationalSchema, synth_db: Database) -> EncodingSpec:
    cols = {}
    for t in schema.tables:
        df = synth_db[t.name]
        for c in t.feature_columns:
            vals = df[c.name].dropna()
            if c.kind == NUMERIC:
                x = vals.to_numpy(dtype=np.float64)
                mean = float(x.mean()) if len(x) else 0.0
                std = float(x.std(ddof=1)) if len(x) > 1 else 0.0
                fallback = not (np.isfinite(std) and std > 0)
                if fallback:
                    log.warning("%s.%s has zero variance in synthetic data; using std=1", t.name, c.name)
                    std = 1.0
                cols[(t.name, c.name)] = NumericEncoding(mean, std, fallback)
            else:
                cols[(t.name, c.name)] = CategoricalEncoding(tuple(sorted(set(vals.astype(str)))))
    return EncodingSpec(schema=schema, columns=cols)


def apply_encoding(spec: EncodingSpec, db: Database) -> tuple[dict, dict]:
    """Encode every table of ``db``.

    Returns ``(features, report)`` where ``features`` maps table name to a
    float64 matrix with one column per non-key column, and ``report`` holds
    per-column counts of missing values and unseen categories.
    """
    features, report = {}, {}
    for t in spec.schema.tables:
        df = db[t.name]
        cols = t.feature_columns
        x = np.zeros((len(df), len(cols)))
        trep = {}
        for j, c in enumerate(cols):
            enc = spec.columns[(t.name, c.name)]
            raw = df[c.name]
            missing = raw.isna().to_numpy()
            unseen = 0
            if isinstance(enc, NumericEncoding):
                v = (raw.to_numpy(dtype=np.float64) - enc.mean) / enc.std
            else:
                codes = np.array(
                    [0 if m else enc.code(str(val)) for val, m in zip(raw.tolist(), missing)], dtype=np.float64
                )
                unseen = int(np.sum((codes == len(enc.categories)) & ~missing))
                v = codes / enc.scale
            v[missing] = 0.0
            x[:, j] = v
            trep[c.name] = {"missing": int(missing.sum()), "unseen": unseen}
        features[t.name] = x
        report[t.name] = trep
    return features, report

