from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import pytest

from mtmia import datagen, featenc, relgraph
from mtmia.relgraph import CATEGORICAL, NUMERIC, Column, Database, ForeignKey, RelationalSchema, TableSpec

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def quiet_logs():
    logging.disable(logging.WARNING)
    yield
    logging.disable(logging.NOTSET)


def three_table_schema() -> RelationalSchema:
    """users <- orders <- items, with a categorical column on orders."""
    users = TableSpec("users", (Column("uid", CATEGORICAL), Column("age", NUMERIC)), "uid")
    orders = TableSpec(
        "orders",
        (Column("oid", CATEGORICAL), Column("uid", CATEGORICAL), Column("amount", NUMERIC), Column("kind", CATEGORICAL)),
        "oid",
        (ForeignKey("uid", "users"),),
    )
    items = TableSpec(
        "items",
        (Column("iid", CATEGORICAL), Column("oid", CATEGORICAL), Column("price", NUMERIC)),
        "iid",
        (ForeignKey("oid", "orders"),),
    )
    return RelationalSchema((users, orders, items), "users")


def random_three_table_db(rng: np.random.Generator, n_users: int, max_orders: int = 3, max_items: int = 2,
                          prefix: str = "") -> Database:
    users, orders, items = [], [], []
    for u in range(n_users):
        uid = f"{prefix}u{u}"
        users.append((uid, float(rng.normal())))
        for _ in range(int(rng.integers(0, max_orders + 1))):
            oid = f"{prefix}o{len(orders)}"
            orders.append((oid, uid, float(rng.normal()), str(rng.choice(["x", "y", "z"]))))
            for _ in range(int(rng.integers(0, max_items + 1))):
                items.append((f"{prefix}i{len(items)}", oid, float(rng.normal())))
    return Database({
        "users": pd.DataFrame(users, columns=["uid", "age"]),
        "orders": pd.DataFrame(orders, columns=["oid", "uid", "amount", "kind"]),
        "items": pd.DataFrame(items, columns=["iid", "oid", "price"]),
    })


def encoded_graph(schema, db, fit_db=None):
    enc = featenc.fit_encoding(schema, db if fit_db is None else fit_db)
    feats, _ = featenc.apply_encoding(enc, db)
    return relgraph.build_graph(schema, db, feats)


def toy_entities(children=(0, 1, 3), cdim=3, tdim=2, seed=0, tx_rows=None):
    """One customer per entry of ``children`` with that many transactions."""
    rng = np.random.default_rng(seed)
    schema = datagen.toy_schema(cdim, tdim)
    cust = pd.DataFrame(rng.normal(size=(len(children), cdim)), columns=[f"c{i}" for i in range(cdim)])
    cust.insert(0, "customer_id", [f"c{i}" for i in range(len(children))])
    owners = np.repeat(cust["customer_id"].to_numpy(), children)
    x = rng.normal(size=(len(owners), tdim)) if tx_rows is None else tx_rows
    tx = pd.DataFrame(x, columns=[f"t{i}" for i in range(tdim)])
    tx.insert(0, "customer_id", owners)
    tx.insert(0, "transaction_id", [f"t{i}" for i in range(len(owners))])
    db = Database({"customers": cust, "transactions": tx})
    g = relgraph.build_graph(schema, db, {"customers": cust.iloc[:, 1:].to_numpy(), "transactions": x})
    return schema, db, relgraph.decompose_entities(g)

