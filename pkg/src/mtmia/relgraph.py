"""Relational schemas, database instances and their heterogeneous-graph form.

A database becomes a graph with one node type per table and one edge per
foreign-key reference, directed child -> parent. User entities are the
connected components that contain exactly one row of the root table.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EntangledEntitiesError, IngestionError, SchemaError, TheoremViolation

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
_KINDS = (NUMERIC, CATEGORICAL)

EdgeType = tuple  # (source type, relation name, destination type)


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass(frozen=True)
class ForeignKey:
    column: str
    references: str


@dataclass(frozen=True)
class TableSpec:
    name: str
    columns: tuple
    primary_key: str
    foreign_keys: tuple = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate column names")
        for c in self.columns:
            if c.kind not in _KINDS:
                raise SchemaError(f"table {self.name!r}: column {c.name!r} has unknown kind {c.kind!r}")
        if self.primary_key not in names:
            raise SchemaError(f"table {self.name!r}: primary key {self.primary_key!r} is not a column")
        for fk in self.foreign_keys:
            if fk.column not in names:
                raise SchemaError(f"table {self.name!r}: foreign key column {fk.column!r} is not a column")

    @property
    def key_columns(self) -> list[str]:
        return [self.primary_key] + [fk.column for fk in self.foreign_keys]

    @property
    def feature_columns(self) -> list[Column]:
        keys = set(self.key_columns)
        return [c for c in self.columns if c.name not in keys]


@dataclass(frozen=True)
class RelationalSchema:
    tables: tuple
    root_table: str

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate table names")
        if self.root_table not in names:
            raise SchemaError(f"root table {self.root_table!r} is not in the schema")
        for t in self.tables:
            for fk in t.foreign_keys:
                if fk.references not in names:
                    raise SchemaError(
                        f"{t.name}.{fk.column} references unknown table {fk.references!r}"
                    )
        # schema graph must be connected
        seen, stack = {self.root_table}, [self.root_table]
        adj = {n: set() for n in names}
        for child, _, parent in self.relations():
            adj[child].add(parent)
            adj[parent].add(child)
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(names):
            raise SchemaError(f"schema graph is not connected; unreachable tables {sorted(set(names) - seen)}")

    def table(self, name: str) -> TableSpec:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def relations(self) -> list[EdgeType]:
        return [(t.name, fk.column, fk.references) for t in self.tables for fk in t.foreign_keys]

    @classmethod
    def from_dict(cls, doc: dict) -> "RelationalSchema":
        try:
            tables = tuple(
                TableSpec(
                    name=t["name"],
                    columns=tuple(Column(c["name"], c["kind"]) for c in t["columns"]),
                    primary_key=t["primary_key"],
                    foreign_keys=tuple(
                        ForeignKey(fk["column"], fk["references"]) for fk in t.get("foreign_keys", [])
                    ),
                )
                for t in doc["tables"]
            )
            return cls(tables=tables, root_table=doc["root_table"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "tables": [
                {
                    "name": t.name,
                    "columns": [{"name": c.name, "kind": c.kind} for c in t.columns],
                    "primary_key": t.primary_key,
                    "foreign_keys": [{"column": fk.column, "references": fk.references} for fk in t.foreign_keys],
                }
                for t in self.tables
            ],
            "root_table": self.root_table,
        }

    @classmethod
    def load(cls, path) -> "RelationalSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Database:
    """One pandas frame per table. Key and categorical columns hold strings."""

    tables: dict

    def __getitem__(self, name: str) -> pd.DataFrame:
        return self.tables[name]

    def num_rows(self, name: str) -> int:
        return len(self.tables[name])


def _read_table_csv(path: Path, table: TableSpec) -> pd.DataFrame:
    str_cols = {c.name: str for c in table.columns if c.kind == CATEGORICAL or c.name in table.key_columns}
    try:
        df = pd.read_csv(path, dtype=str_cols, encoding="utf-8")
    except FileNotFoundError as exc:
        raise IngestionError(f"missing table file {path}") from exc
    expected = [c.name for c in table.columns]
    if list(df.columns) != expected:
        raise IngestionError(f"{path}: header {list(df.columns)} does not match columns {expected}")
    for c in table.feature_columns:
        if c.kind == NUMERIC:
            try:
                df[c.name] = pd.to_numeric(df[c.name]).astype(np.float64)
            except (ValueError, TypeError) as exc:
                raise IngestionError(f"{path}: column {c.name!r} is not numeric") from exc
    return df


def read_database(schema: RelationalSchema, directory) -> Database:
    """Read ``<directory>/<table>.csv`` for every table and validate keys."""
    directory = Path(directory)
    db = Database({t.name: _read_table_csv(directory / f"{t.name}.csv", t) for t in schema.tables})
    validate_database(schema, db)
    return db


def write_database(schema: RelationalSchema, db: Database, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t in schema.tables:
        db[t.name].to_csv(directory / f"{t.name}.csv", index=False)


def validate_database(schema: RelationalSchema, db: Database) -> None:
    for t in schema.tables:
        if t.name not in db.tables:
            raise IngestionError(f"table {t.name!r} missing from database")
        pk = db[t.name][t.primary_key]
        if pk.isna().any():
            raise IngestionError(f"table {t.name!r}: null primary key at row {int(np.flatnonzero(pk.isna())[0])}")
        dup = pk.duplicated()
        if dup.any():
            row = int(np.flatnonzero(dup.to_numpy())[0])
            raise IngestionError(f"table {t.name!r}: duplicate primary key {pk.iloc[row]!r} at row {row}")
    for child, col, parent in schema.relations():
        parent_keys = set(db[parent][schema.table(parent).primary_key])
        vals = db[child][col]
        for row, v in enumerate(vals):
            if isinstance(v, str) and v not in parent_keys:
                raise IngestionError(f"table {child!r} row {row}: {col}={v!r} has no match in {parent!r}")


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


@dataclass
class HeteroGraph:
    schema: RelationalSchema
    num_nodes: dict
    features: dict
    keys: dict
    edges: dict  # edge type -> int64 array of shape (2, E): [source; destination]

    @property
    def node_types(self) -> list[str]:
        return self.schema.table_names

    @property
    def edge_types(self) -> list[EdgeType]:
        return list(self.edges)

    @property
    def num_edges(self) -> int:
        return sum(e.shape[1] for e in self.edges.values())


def build_graph(schema: RelationalSchema, db: Database, features: dict | None = None) -> HeteroGraph:
    """One node per row, one child->parent edge per non-null foreign key."""
    num_nodes, keys, feats, index = {}, {}, {}, {}
    for t in schema.tables:
        df = db[t.name]
        n = len(df)
        num_nodes[t.name] = n
        keys[t.name] = df[t.primary_key].to_numpy(dtype=object)
        index[t.name] = {k: i for i, k in enumerate(keys[t.name])}
        if features is None:
            feats[t.name] = np.zeros((n, 0))
        else:
            x = np.asarray(features[t.name], dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != n:
                raise IngestionError(f"feature matrix for {t.name!r} has shape {x.shape}, expected {n} rows")
            feats[t.name] = x
    edges = {}
    for child, col, parent in schema.relations():
        lookup = index[parent]
        src, dst = [], []
        for row, v in enumerate(db[child][col]):
            if not isinstance(v, str):
                continue
            j = lookup.get(v)
            if j is None:
                raise IngestionError(f"table {child!r} row {row}: dangling foreign key {col}={v!r} -> {parent!r}")
            src.append(row)
            dst.append(j)
        edges[(child, col, parent)] = np.array([src, dst], dtype=np.int64).reshape(2, -1)
    return HeteroGraph(schema=schema, num_nodes=num_nodes, features=feats, keys=keys, edges=edges)


@dataclass
class Subgraph:
    graph: HeteroGraph = field(repr=False)
    nodes: dict  # type -> sorted int64 node indices (every type present)
    edges: dict  # edge type -> (2, E) array of source-graph indices

    @property
    def num_nodes(self) -> int:
        return sum(len(v) for v in self.nodes.values())

    def node_list(self) -> list[tuple[str, int]]:
        return sorted((t, int(i)) for t, idx in self.nodes.items() for i in idx)


@dataclass
class EntitySubgraph(Subgraph):
    root: tuple = (None, -1)

    @property
    def entity_id(self) -> str:
        t, i = self.root
        return str(self.graph.keys[t][i])


def induced_subgraph(graph: HeteroGraph, nodes: dict) -> Subgraph:
    """Subgraph on the given node sets with every source edge between them."""
    sel = {t: np.unique(np.asarray(nodes.get(t, ()), dtype=np.int64)) for t in graph.node_types}
    edges = {}
    for et, e in graph.edges.items():
        src_t, _, dst_t = et
        keep = np.isin(e[0], sel[src_t]) & np.isin(e[1], sel[dst_t])
        edges[et] = e[:, keep]
    return Subgraph(graph=graph, nodes=sel, edges=edges)


def is_connected(sub: Subgraph) -> bool:
    nodes = sub.node_list()
    if not nodes:
        return False
    pos = {n: i for i, n in enumerate(nodes)}
    adj = [[] for _ in nodes]
    for (s_t, _, d_t), e in sub.edges.items():
        for a, b in e.T:
            i, j = pos[(s_t, int(a))], pos[(d_t, int(b))]
            adj[i].append(j)
            adj[j].append(i)
    seen, stack = {0}, [0]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == len(nodes)


def _offsets(graph: HeteroGraph) -> dict:
    off, total = {}, 0
    for t in graph.node_types:
        off[t] = total
        total += graph.num_nodes[t]
    return off


def component_labels(graph: HeteroGraph) -> np.ndarray:
    """Connected-component id for every node, in global (type-offset) order."""
    off = _offsets(graph)
    total = sum(graph.num_nodes.values())
    src = [e[0] + off[et[0]] for et, e in graph.edges.items()]
    dst = [e[1] + off[et[2]] for et, e in graph.edges.items()]
    src = np.concatenate(src) if src else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, dtype=np.int64)
    adj = coo_matrix((np.ones(len(src)), (src, dst)), shape=(total, total))
    _, labels = connected_components(adj, directed=False)
    return labels


def decompose_entities(graph: HeteroGraph, return_unreachable: bool = False):
    """Split the graph into one connected subgraph per root-table row.

    Raises EntangledEntitiesError if two root rows share a component. Nodes
    not reachable from any root are dropped with a logged warning.
    """
    root_t = graph.schema.root_table
    off = _offsets(graph)
    labels = component_labels(graph)
    n_root = graph.num_nodes[root_t]
    root_labels = labels[off[root_t]:off[root_t] + n_root]

    uniq, first, counts = np.unique(root_labels, return_index=True, return_counts=True)
    if np.any(counts > 1):
        comp = uniq[np.argmax(counts > 1)]
        a, b = np.flatnonzero(root_labels == comp)[:2]
        keys = graph.keys[root_t]
        raise EntangledEntitiesError(
            f"entangled entities: root rows {keys[a]!r} and {keys[b]!r} of {root_t!r} share a connected component"
        )

    comp_to_entity = np.full(labels.max() + 1 if len(labels) else 0, -1, dtype=np.int64)
    comp_to_entity[root_labels] = np.arange(n_root)
    owner = comp_to_entity[labels] if len(labels) else labels
    unreachable = int(np.sum(owner < 0))
    if unreachable:
        log.warning("%d nodes are not reachable from any %r row and were dropped", unreachable, root_t)

    node_groups = {}
    for t in graph.node_types:
        o = owner[off[t]:off[t] + graph.num_nodes[t]]
        node_groups[t] = _group(o, n_root)
    edge_groups = {}
    for et, e in graph.edges.items():
        o = owner[off[et[0]] + e[0]] if e.shape[1] else np.zeros(0, dtype=np.int64)
        edge_groups[et] = _group(o, n_root)

    subs = []
    for i in range(n_root):
        subs.append(
            EntitySubgraph(
                graph=graph,
                nodes={t: node_groups[t][i] for t in graph.node_types},
                edges={et: graph.edges[et][:, edge_groups[et][i]] for et in graph.edges},
                root=(root_t, i),
            )
        )
    if return_unreachable:
        return subs, unreachable
    return subs


def _group(owner: np.ndarray, n: int) -> list:
    """Positions of ``owner`` grouped by owner value 0..n-1, each ascending."""
    order = np.argsort(owner, kind="stable")
    sorted_owner = owner[order]
    bounds = np.searchsorted(sorted_owner, np.arange(n + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(n)]


def membership_consistency(sub: Subgraph, node_labels: dict):
    """Return the single label shared by every node of a connected subgraph.

    ``node_labels`` maps node type to a label array aligned with the source
    graph's nodes. Mixed labels mean the graph was not a disjoint union of
    member and holdout parts, so TheoremViolation is raised.
    """
    seen = set()
    for t, idx in sub.nodes.items():
        if len(idx):
            seen.update(np.asarray(node_labels[t])[idx].tolist())
    if not seen:
        raise TheoremViolation("subgraph has no nodes")
    if len(seen) > 1:
        raise TheoremViolation(f"theorem violated: connected subgraph mixes labels {sorted(map(str, seen))}")
    return seen.pop()
