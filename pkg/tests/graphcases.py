"""Randomised disjoint-union databases for the membership-consistency suite."""
from __future__ import annotations

import numpy as np
import pandas as pd

from mtmia.errors import TheoremViolation
from mtmia.relgraph import Database, build_graph, induced_subgraph, membership_consistency

from conftest import random_three_table_db, three_table_schema
from oracles import connected_subsets

SCHEMA = three_table_schema()


def disjoint_union_db(rng, min_nodes: int = 6, max_nodes: int = 12) -> Database:
    """Member part (keys prefixed m) plus holdout part (prefixed h), no cross FKs."""
    while True:
        parts = [
            random_three_table_db(rng, int(rng.integers(1, 4)), max_orders=3, max_items=2, prefix=p)
            for p in ("m", "h")
        ]
        db = Database({t: _concat([p[t] for p in parts]) for t in SCHEMA.table_names})
        size = sum(len(db[t]) for t in SCHEMA.table_names)
        if min_nodes <= size <= max_nodes and len(db["orders"]):
            return db


def _concat(frames):
    nonempty = [f for f in frames if len(f)]
    return pd.concat(nonempty, ignore_index=True) if nonempty else frames[0]


def with_cross_edge(rng, db: Database) -> Database:
    """Re-point one order's user FK to a user on the other side."""
    orders = db["orders"].copy()
    users = db["users"]["uid"].tolist()
    i = int(rng.integers(len(orders)))
    side = orders.loc[i, "oid"][0]
    others = [u for u in users if u[0] != side]
    orders.loc[i, "uid"] = others[int(rng.integers(len(others)))]
    return Database({"users": db["users"], "orders": orders, "items": db["items"]})


def node_labels(graph) -> dict:
    return {t: np.array([k[0] for k in graph.keys[t]]) for t in graph.node_types}


def global_index(graph):
    """(flat node list, flat edge list) with nodes as (type, index)."""
    nodes = [(t, i) for t in graph.node_types for i in range(graph.num_nodes[t])]
    pos = {n: k for k, n in enumerate(nodes)}
    edges = [(pos[(s, int(a))], pos[(d, int(b))]) for (s, _, d), e in graph.edges.items() for a, b in e.T]
    return nodes, edges


def check_all_connected_subgraphs(graph) -> tuple[int, int, int]:
    """Run membership_consistency on every connected subgraph.

    Returns (subgraphs checked, mixed by the oracle, flagged by the package).
    Raises AssertionError when the two disagree on any subgraph.
    """
    labels = node_labels(graph)
    nodes, edges = global_index(graph)
    flat = [labels[t][i] for t, i in nodes]
    checked = mixed = flagged = 0
    for mask in connected_subsets(len(nodes), edges, max_size=12):
        members = [k for k in range(len(nodes)) if mask >> k & 1]
        sel = {}
        for k in members:
            t, i = nodes[k]
            sel.setdefault(t, []).append(i)
        sub = induced_subgraph(graph, sel)
        oracle_mixed = len({flat[k] for k in members}) > 1
        try:
            got = membership_consistency(sub, labels)
            raised = False
        except TheoremViolation:
            raised = True
        assert raised == oracle_mixed, f"subgraph {members}: oracle mixed={oracle_mixed}, raised={raised}"
        if not raised:
            assert got == flat[members[0]]
        checked += 1
        mixed += oracle_mixed
        flagged += raised
    return checked, mixed, flagged


def build(db: Database):
    return build_graph(SCHEMA, db)
