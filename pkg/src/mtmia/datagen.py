"""Toy customer/transaction benchmark and mock synthetic-data generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .relgraph import CATEGORICAL, NUMERIC, Column, Database, ForeignKey, RelationalSchema, TableSpec


@dataclass(frozen=True)
class ToySpec:
    members: int = 500
    nonmembers: int = 500
    member_children: int = 100
    nonmember_children: int = 1
    customer_dim: int = 5
    transaction_dim: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.members, self.nonmembers) < 1:
            raise ValueError("member and nonmember counts must be >= 1")
        if min(self.customer_dim, self.transaction_dim) < 1:
            raise ValueError("feature dimensions must be >= 1")
        if min(self.member_children, self.nonmember_children) < 0:
            raise ValueError("children per parent must be >= 0")


def toy_schema(customer_dim: int = 5, transaction_dim: int = 5) -> RelationalSchema:
    customers = TableSpec(
        name="customers",
        columns=(Column("customer_id", CATEGORICAL),)
        + tuple(Column(f"c{i}", NUMERIC) for i in range(customer_dim)),
        primary_key="customer_id",
    )
    transactions = TableSpec(
        name="transactions",
        columns=(Column("transaction_id", CATEGORICAL), Column("customer_id", CATEGORICAL))
        + tuple(Column(f"t{i}", NUMERIC) for i in range(transaction_dim)),
        primary_key="transaction_id",
        foreign_keys=(ForeignKey("customer_id", "customers"),),
    )
    return RelationalSchema(tables=(customers, transactions), root_table="customers")


def _toy_part(rng, prefix: str, n: int, children: int, cdim: int, tdim: int) -> Database:
    cust_ids = [f"{prefix}c{i:06d}" for i in range(n)]
    cust = pd.DataFrame(rng.standard_normal((n, cdim)), columns=[f"c{i}" for i in range(cdim)])
    cust.insert(0, "customer_id", cust_ids)
    m = n * children
    tx = pd.DataFrame(rng.standard_normal((m, tdim)), columns=[f"t{i}" for i in range(tdim)])
    tx.insert(0, "customer_id", np.repeat(np.array(cust_ids, dtype=object), children))
    tx.insert(0, "transaction_id", [f"{prefix}t{i:08d}" for i in range(m)])
    return Database({"customers": cust, "transactions": tx})


def gen_toy(spec: ToySpec = ToySpec()) -> tuple[Database, Database, RelationalSchema]:
    """Members own ``member_children`` transactions each, nonmembers
    ``nonmember_children``; every feature is i.i.d. standard normal."""
    rng = np.random.default_rng(spec.seed)
    schema = toy_schema(spec.customer_dim, spec.transaction_dim)
    train = _toy_part(rng, "m", spec.members, spec.member_children, spec.customer_dim, spec.transaction_dim)
    holdout = _toy_part(rng, "h", spec.nonmembers, spec.nonmember_children, spec.customer_dim, spec.transaction_dim)
    return train, holdout, schema


def _structural_copy(schema: RelationalSchema, db: Database, prefix: str) -> Database:
    """Copy every table with fresh primary keys and remapped foreign keys."""
    remap, out = {}, {}
    for t in schema.tables:
        old = db[t.name][t.primary_key].tolist()
        remap[t.name] = {k: f"{prefix}{t.name}-{i:08d}" for i, k in enumerate(old)}
    for t in schema.tables:
        df = db[t.name].copy()
        df[t.primary_key] = [remap[t.name][k] for k in df[t.primary_key]]
        for fk in t.foreign_keys:
            lookup = remap[fk.references]
            df[fk.column] = [lookup[v] if isinstance(v, str) else v for v in df[fk.column]]
        out[t.name] = df.reset_index(drop=True)
    return Database(out)


def mock_memorizing_generator(schema: RelationalSchema, train: Database, noise_scale: float = 0.0, seed: int = 0) -> Database:
    """Release the training data itself, optionally with Gaussian feature noise."""
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    rng = np.random.default_rng(seed)
    synth = _structural_copy(schema, train, "s")
    if noise_scale > 0:
        for t in schema.tables:
            df = synth[t.name]
            for c in t.feature_columns:
                if c.kind == NUMERIC:
                    df[c.name] = df[c.name].to_numpy(dtype=np.float64) + noise_scale * rng.standard_normal(len(df))
    return synth


def mock_independent_generator(schema: RelationalSchema, train: Database, seed: int = 0) -> Database:
    """Same row counts and foreign-key group sizes as ``train``; every feature
    is redrawn from per-column marginals (Gaussian for numeric, empirical
    frequencies for categorical), so no record is memorised."""
    rng = np.random.default_rng(seed)
    synth = _structural_copy(schema, train, "s")
    for t in schema.tables:
        df = synth[t.name]
        n = len(df)
        for c in t.feature_columns:
            col = train[t.name][c.name].dropna()
            if c.kind == NUMERIC:
                x = col.to_numpy(dtype=np.float64)
                mu = float(x.mean()) if len(x) else 0.0
                sd = float(x.std(ddof=1)) if len(x) > 1 else 0.0
                df[c.name] = mu + sd * rng.standard_normal(n)
            else:
                cats, counts = np.unique(col.astype(str).to_numpy(), return_counts=True)
                if len(cats):
                    df[c.name] = rng.choice(cats, size=n, p=counts / counts.sum())
    return synth
