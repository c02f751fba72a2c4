"""Heterogeneous graph encoder for user subgraphs and its reconstruction training.

Pipeline for a batch of entity subgraphs:

1. per-type input projection of the encoded row features;
2. ``num_layers`` rounds of attention message passing (GATv2-style scores)
   over every foreign-key relation and its reversed twin, averaged across
   relations, with a residual connection and a leaky-ReLU;
3. the root node's final state is ``z_parent``; every other node type is
   attention-pooled per entity and mapped into ``z_context``;
4. a sigmoid gate fuses the two: ``z_final = z_parent + g * tanh(W z_context + b)``.

Training reconstructs the root's features and, per child type, the sum of
that type's features from ``z_final``.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import json
import numpy as np

from .diffcore import AdamState, Tape, Tensor, adam_step, backward, constant, glorot, parameter, tensors_from_doc, tensors_to_doc
from .errors import ConfigError, NumericError
from .relgraph import RelationalSchema, Subgraph

log = logging.getLogger(__name__)

SPACES = ("parent", "context", "final")


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 64
    num_layers: int = 2
    heads: int = 1
    leaky_slope: float = 0.2
    lambda_parent: float = 1.0
    lambda_context: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ConfigError("hidden_dim and num_layers must be >= 1")
        if self.heads < 1 or self.hidden_dim % self.heads:
            raise ConfigError(f"heads={self.heads} must divide hidden_dim={self.hidden_dim}")
        if self.lambda_parent < 0 or self.lambda_context < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lambda_parent == 0 and self.lambda_context == 0:
            raise ConfigError("lambda_parent and lambda_context cannot both be zero")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")

    @classmethod
    def from_dict(cls, doc: dict) -> "EncoderConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown encoder options {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str


@dataclass(frozen=True)
class Layout:
    """Schema-derived structure the parameters are shaped for."""

    node_types: tuple
    root: str
    child_types: tuple
    relations: tuple
    feature_dims: dict = field(hash=False, compare=True)

    @classmethod
    def build(cls, schema: RelationalSchema, feature_dims: dict) -> "Layout":
        rels = []
        for child, col, parent in schema.relations():
            rels.append(Relation(f"{child}.{col}", child, parent))
            rels.append(Relation(f"{child}.{col}~rev", parent, child))
        types = tuple(schema.table_names)
        return cls(
            node_types=types,
            root=schema.root_table,
            child_types=tuple(t for t in types if t != schema.root_table),
            relations=tuple(rels),
            feature_dims={t: int(feature_dims[t]) for t in types},
        )

    def incoming(self, t: str) -> list:
        return [r for r in self.relations if r.dst == t]


@dataclass
class EncoderParams:
    config: EncoderConfig
    layout: Layout
    schema_fingerprint: str
    tensors: dict  # name -> Tensor, insertion order is the canonical order

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def save(self, path) -> None:
        doc = {
            "config": asdict(self.config),
            "schema_fingerprint": self.schema_fingerprint,
            "feature_dims": self.layout.feature_dims,
            "tensors": tensors_to_doc(self.tensors),
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path, schema: RelationalSchema) -> "EncoderParams":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc["schema_fingerprint"] != schema.fingerprint():
            raise ConfigError(f"checkpoint {path} was trained for a different schema")
        return cls(
            config=EncoderConfig.from_dict(doc["config"]),
            layout=Layout.build(schema, doc["feature_dims"]),
            schema_fingerprint=doc["schema_fingerprint"],
            tensors=tensors_from_doc(doc["tensors"]),
        )

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config, self.layout, self.schema_fingerprint,
            {k: parameter(t.value.copy(), name=k) for k, t in self.tensors.items()},
        )


def init_params(config: EncoderConfig, schema: RelationalSchema, feature_dims: dict, rng=None) -> EncoderParams:
    """Glorot-uniform weights, zero biases, drawn in a fixed name order."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    layout = Layout.build(schema, feature_dims)
    d = config.hidden_dim
    shapes = []
    for t in layout.node_types:
        shapes += [(f"input/{t}/W", (layout.feature_dims[t], d), True), (f"input/{t}/b", (1, d), False)]
    for layer in range(config.num_layers):
        for r in layout.relations:
            shapes += [
                (f"layer{layer}/{r.name}/W_src", (d, d), True),
                (f"layer{layer}/{r.name}/W_dst", (d, d), True),
                (f"layer{layer}/{r.name}/att", (1, d), True),
            ]
    for t in layout.child_types:
        shapes += [
            (f"pool/{t}/U", (d, d), True),
            (f"pool/{t}/v", (d, 1), True),
            (f"context/{t}/W", (d, d), True),
        ]
    shapes += [
        ("gate/W1", (2 * d, d), True), ("gate/b1", (1, d), False),
        ("gate/W2", (d, d), True), ("gate/b2", (1, d), False),
        ("phi/W", (d, d), True), ("phi/b", (1, d), False),
        ("decode/parent/W", (d, layout.feature_dims[layout.root]), True),
        ("decode/parent/b", (1, layout.feature_dims[layout.root]), False),
    ]
    for t in layout.child_types:
        shapes += [
            (f"decode/{t}/W", (d, layout.feature_dims[t]), True),
            (f"decode/{t}/b", (1, layout.feature_dims[t]), False),
        ]
    tensors = {}
    for name, (r, c), random in shapes:
        value = glorot(rng, r, c) if random and r + c > 0 else np.zeros((r, c))
        tensors[name] = parameter(value, name=name)
    return EncoderParams(config, layout, schema.fingerprint(), tensors)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class _Packed:
    """One entity's features and relation edges in local indices."""

    entity_id: str
    x: dict
    edges: dict  # relation name -> (src_local, dst_local)


def pack(sub: Subgraph, layout: Layout) -> _Packed:
    g = sub.graph
    x = {t: g.features[t][sub.nodes[t]] for t in layout.node_types}
    edges = {}
    for (child, col, parent), e in sub.edges.items():
        s = np.searchsorted(sub.nodes[child], e[0])
        d = np.searchsorted(sub.nodes[parent], e[1])
        edges[f"{child}.{col}"] = (s, d)
        edges[f"{child}.{col}~rev"] = (d, s)
    if len(sub.nodes[layout.root]) != 1:
        raise ValueError(f"subgraph must contain exactly one {layout.root!r} node")
    root = getattr(sub, "root", None)
    eid = sub.entity_id if root is not None and root[0] is not None else ""
    return _Packed(eid, x, edges)


@dataclass
class Batch:
    size: int
    x: dict          # type -> (n_t, f_t)
    seg: dict        # type -> (n_t,) entity of each node
    edges: dict      # relation -> (src, dst) batch-local indices
    inv_deg: dict    # type -> (n_t, 1) 1 / number of relations with incoming edges
    targets: dict    # child type -> (B, f_t) summed child features
    ids: list


def make_batch(packs: list, layout: Layout) -> Batch:
    B = len(packs)
    x, seg, offsets = {}, {}, {}
    for t in layout.node_types:
        sizes = [p.x[t].shape[0] for p in packs]
        offsets[t] = np.concatenate([[0], np.cumsum(sizes)])[:-1]
        fdim = layout.feature_dims[t]
        x[t] = np.concatenate([p.x[t] for p in packs]) if packs else np.zeros((0, fdim))
        x[t] = x[t].reshape(-1, fdim)
        seg[t] = np.repeat(np.arange(B), sizes).astype(np.int64)
    edges = {}
    for r in layout.relations:
        src = [p.edges[r.name][0] + offsets[r.src][i] for i, p in enumerate(packs) if r.name in p.edges]
        dst = [p.edges[r.name][1] + offsets[r.dst][i] for i, p in enumerate(packs) if r.name in p.edges]
        if src:
            s, d = np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)
            if len(s):
                edges[r.name] = (s, d)
    inv_deg = {}
    for t in layout.node_types:
        cnt = np.zeros(x[t].shape[0])
        for r in layout.incoming(t):
            if r.name in edges:
                has = np.zeros(x[t].shape[0], dtype=bool)
                has[edges[r.name][1]] = True
                cnt += has
        inv_deg[t] = (1.0 / np.maximum(cnt, 1.0)).reshape(-1, 1)
    targets = {}
    for t in layout.child_types:
        tgt = np.zeros((B, layout.feature_dims[t]))
        np.add.at(tgt, seg[t], x[t])
        targets[t] = tgt
    return Batch(B, x, seg, edges, inv_deg, targets, [p.entity_id for p in packs])


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _head_block(d: int, heads: int) -> np.ndarray:
    blk = np.zeros((heads, d))
    w = d // heads
    for h in range(heads):
        blk[h, h * w:(h + 1) * w] = 1.0
    return blk


def input_projection(tape: Tape, params: EncoderParams, batch: Batch) -> dict:
    return {
        t: tape.add(tape.matmul(constant(batch.x[t]), params[f"input/{t}/W"]), params[f"input/{t}/b"])
        for t in params.layout.node_types
    }


def message_pass(tape: Tape, params: EncoderParams, batch: Batch, H: dict, layer: int, attention: dict | None = None) -> dict:
    """One heterogeneous attention layer: ``H_l -> H_{l+1}``.

    If ``attention`` is a dict it receives the normalised attention weights
    per relation, shape (E, heads).
    """
    cfg = params.config
    slope = cfg.leaky_slope
    blk = constant(_head_block(cfg.hidden_dim, cfg.heads))
    blk_t = constant(blk.value.T)
    out = {}
    for t in params.layout.node_types:
        n_t = batch.x[t].shape[0]
        msgs = []
        for r in params.layout.incoming(t):
            if r.name not in batch.edges:
                continue
            src, dst = batch.edges[r.name]
            pre = f"layer{layer}/{r.name}"
            hs = tape.gather(tape.matmul(H[r.src], params[pre + "/W_src"]), src)
            hd = tape.gather(tape.matmul(H[t], params[pre + "/W_dst"]), dst)
            e = tape.leaky_relu(tape.add(hs, hd), slope)
            logits = tape.matmul(tape.mul(e, params[pre + "/att"]), blk_t)
            alpha = tape.segment_softmax(logits, dst, n_t)
            if attention is not None:
                attention[r.name] = alpha.value
            weights = alpha if cfg.heads == 1 else tape.matmul(alpha, blk)
            msgs.append(tape.segment_sum(tape.mul(hs, weights), dst, n_t))
        h = H[t]
        if msgs:
            agg = msgs[0]
            for m in msgs[1:]:
                agg = tape.add(agg, m)
            h = tape.add(h, tape.mul(agg, constant(batch.inv_deg[t])))
        out[t] = tape.leaky_relu(h, slope)
    return out


def attention_pool(tape: Tape, params: EncoderParams, t: str, h: Tensor, seg, num_segments: int) -> Tensor:
    """Softmax(v . tanh(U h_j)) weighted sum of node states per segment."""
    score = tape.matmul(tape.tanh(tape.matmul(h, params[f"pool/{t}/U"])), params[f"pool/{t}/v"])
    w = tape.segment_softmax(score, seg, num_segments)
    return tape.segment_sum(tape.mul(h, w), seg, num_segments)


def forward(tape: Tape, params: EncoderParams, batch: Batch) -> dict:
    cfg, lay = params.config, params.layout
    H = input_projection(tape, params, batch)
    for layer in range(cfg.num_layers):
        H = message_pass(tape, params, batch, H, layer)
    # one root-type node per entity, stored in entity order
    z_parent = H[lay.root]
    z_context = None
    for t in lay.child_types:
        if batch.x[t].shape[0] == 0:
            continue
        pooled = attention_pool(tape, params, t, H[t], batch.seg[t], batch.size)
        term = tape.matmul(pooled, params[f"context/{t}/W"])
        z_context = term if z_context is None else tape.add(z_context, term)
    if z_context is None:
        z_context = constant(np.zeros((batch.size, cfg.hidden_dim)))
    hidden = tape.leaky_relu(
        tape.add(tape.matmul(tape.concat([z_parent, z_context]), params["gate/W1"]), params["gate/b1"]),
        cfg.leaky_slope,
    )
    gate = tape.sigmoid(tape.add(tape.matmul(hidden, params["gate/W2"]), params["gate/b2"]))
    phi = tape.tanh(tape.add(tape.matmul(z_context, params["phi/W"]), params["phi/b"]))
    z_final = tape.add(z_parent, tape.mul(gate, phi))
    return {"parent": z_parent, "context": z_context, "gate": gate, "phi": phi, "final": z_final}


def loss_from_embeddings(tape: Tape, params: EncoderParams, batch: Batch, z_final: Tensor) -> Tensor:
    cfg, lay = params.config, params.layout
    B = batch.size
    root_x = batch.x[lay.root]
    pred = tape.add(tape.matmul(z_final, params["decode/parent/W"]), params["decode/parent/b"])
    loss = tape.l2_loss(pred, root_x, cfg.lambda_parent / B)
    for t in lay.child_types:
        pred = tape.add(tape.matmul(z_final, params[f"decode/{t}/W"]), params[f"decode/{t}/b"])
        loss = tape.add(loss, tape.l2_loss(pred, batch.targets[t], cfg.lambda_context / B))
    return loss


def reconstruction_loss(params: EncoderParams, subgraphs, tape: Tape | None = None) -> Tensor:
    """Mean over entities of the weighted parent + per-child-type context errors."""
    if not subgraphs:
        raise ValueError("reconstruction_loss needs a non-empty batch")
    tape = Tape() if tape is None else tape
    batch = make_batch([pack(s, params.layout) for s in subgraphs], params.layout)
    out = forward(tape, params, batch)
    return loss_from_embeddings(tape, params, batch, out["final"])


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


@dataclass
class EntityEmbedding:
    entity_id: str
    z_parent: np.ndarray
    z_context: np.ndarray
    gate: np.ndarray
    phi_context: np.ndarray
    z_final: np.ndarray


def encode_subgraph(params: EncoderParams, sub: Subgraph) -> EntityEmbedding:
    batch = make_batch([pack(sub, params.layout)], params.layout)
    out = forward(Tape(record=False), params, batch)
    return EntityEmbedding(
        entity_id=batch.ids[0],
        z_parent=out["parent"].value[0].copy(),
        z_context=out["context"].value[0].copy(),
        gate=out["gate"].value[0].copy(),
        phi_context=out["phi"].value[0].copy(),
        z_final=out["final"].value[0].copy(),
    )


def embed(params: EncoderParams, subgraphs) -> dict:
    """Embedding matrices per space, one row per subgraph.

    Entities are encoded one at a time so a subgraph's embedding never
    depends on which other subgraphs it is scored with.
    """
    d = params.config.hidden_dim
    out = {s: np.zeros((len(subgraphs), d)) for s in SPACES}
    for i, sub in enumerate(subgraphs):
        emb = encode_subgraph(params, sub)
        out["parent"][i] = emb.z_parent
        out["context"][i] = emb.z_context
        out["final"][i] = emb.z_final
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_encoder(config: EncoderConfig, subgraphs, schema: RelationalSchema | None = None):
    """Fit the encoder on (synthetic) entity subgraphs.

    Returns ``(params, history)`` with ``history`` the mean training loss of
    each epoch. Identical seeds give bit-identical parameters.
    """
    if len(subgraphs) < 2:
        raise ValueError("training needs at least two subgraphs")
    if schema is None:
        schema = subgraphs[0].graph.schema
    feature_dims = {t: subgraphs[0].graph.features[t].shape[1] for t in schema.table_names}
    rng = np.random.default_rng(config.seed)
    params = init_params(config, schema, feature_dims, rng)
    packs = [pack(s, params.layout) for s in subgraphs]
    state = AdamState(lr=config.learning_rate)
    names = list(params.tensors)
    history = []
    n = len(packs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            batch = make_batch([packs[i] for i in idx], params.layout)
            tape = Tape()
            out = forward(tape, params, batch)
            loss = loss_from_embeddings(tape, params, batch, out["final"])
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            grads = backward(tape, loss)
            by_name = {k: grads[params[k]] for k in names if params[k] in grads}
            adam_step(params.tensors, by_name, state)
            total += value * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return params, history
