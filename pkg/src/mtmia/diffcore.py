"""A small float64 reverse-mode differentiation core.

Every tensor is a 2-D array. Operations are recorded on an explicit ``Tape``
in execution order; ``backward`` walks the tape once in reverse and
accumulates gradients into the leaf parameters.

    >>> tape = Tape()
    >>> x = parameter([[1.0, 2.0]])
    >>> loss = tape.matmul(x, constant([[1.0], [2.0]]))
    >>> grads = backward(tape, loss)
    >>> grads[x].tolist()
    [[1.0, 2.0]]
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import NumericError

SIGMOID_CLAMP = 40.0


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}{self.shape}"


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@dataclass
class _Record:
    op: str
    inputs: tuple
    out: Tensor
    backward: Callable


@dataclass
class Tape:
    """Ordered record of primitive operations.

    With ``record=False`` the tape evaluates only (inference mode).
    """

    records: list = field(default_factory=list)
    record: bool = True

    def _emit(self, op, inputs, value, backward_fn) -> Tensor:
        out = Tensor(value, requires_grad=self.record and any(t.requires_grad for t in inputs))
        if out.requires_grad:
            self.records.append(_Record(op, inputs, out, backward_fn))
        return out

    def __len__(self):
        return len(self.records)

    # -- linear algebra -------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.value, b.value
        return self._emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        sa, sb = a.shape, b.shape
        return self._emit("add", (a, b), a.value + b.value, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.value, b.value
        return self._emit(
            "mul", (a, b), av * bv,
            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        )

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._emit("scale", (a,), a.value * c, lambda g: (g * c,))

    def concat(self, tensors, axis: int = 1) -> Tensor:
        tensors = tuple(tensors)
        sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
        return self._emit(
            "concat", tensors, np.concatenate([t.value for t in tensors], axis=axis),
            lambda g: tuple(np.split(g, sizes, axis=axis)),
        )

    def sum_all(self, a: Tensor) -> Tensor:
        shape = a.shape
        return self._emit("sum", (a,), a.value.sum().reshape(1, 1), lambda g: (np.full(shape, g[0, 0]),))

    # -- indexing and segments -----------------------------------------

    def gather(self, a: Tensor, idx) -> Tensor:
        """Rows ``a[idx]``; the backward pass scatter-adds."""
        idx = np.asarray(idx, dtype=np.int64)
        n = a.shape[0]
        return self._emit("gather", (a,), a.value[idx], lambda g: (_kernels.segment_sum(g, idx, n),))

    def segment_sum(self, a: Tensor, seg, num_segments: int) -> Tensor:
        seg = np.asarray(seg, dtype=np.int64)
        return self._emit(
            "segment_sum", (a,), _kernels.segment_sum(a.value, seg, num_segments), lambda g: (g[seg],)
        )

    def segment_softmax(self, a: Tensor, seg, num_segments: int) -> Tensor:
        seg = np.asarray(seg, dtype=np.int64)
        y = _kernels.segment_softmax(a.value, seg, num_segments)

        def bwd(g):
            dot = _kernels.segment_sum(y * g, seg, num_segments)
            return (y * (g - dot[seg]),)

        return self._emit("segment_softmax", (a,), y, bwd)

    # -- elementwise nonlinearities ---------------------------------------

    def sigmoid(self, a: Tensor) -> Tensor:
        y = 1.0 / (1.0 + np.exp(-np.clip(a.value, -SIGMOID_CLAMP, SIGMOID_CLAMP)))
        return self._emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.value)
        return self._emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))

    def leaky_relu(self, a: Tensor, slope: float = 0.2) -> Tensor:
        av = a.value
        return self._emit(
            "leaky_relu", (a,), np.where(av > 0, av, slope * av), lambda g: (np.where(av > 0, g, slope * g),)
        )

    # -- loss --------------------------------------------------------------

    def l2_loss(self, pred: Tensor, target, weight: float = 1.0) -> Tensor:
        """``weight * sum((pred - target)**2)`` against a constant target."""
        diff = pred.value - np.asarray(target, dtype=np.float64)
        w = float(weight)
        return self._emit("l2_loss", (pred,), np.array([[w * np.sum(diff * diff)]]), lambda g: (2.0 * w * g[0, 0] * diff,))


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradients of a scalar ``loss`` for every leaf tensor with requires_grad.

    Leaf gradients are also stored on ``tensor.grad``.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones((1, 1))}
    leaves = {}
    produced = {id(rec.out) for rec in tape.records}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if not inp.requires_grad or gi is None:
                continue
            k = id(inp)
            if k in grads:
                grads[k] = grads[k] + gi
            else:
                grads[k] = gi
            if k not in produced:
                leaves[k] = inp
    for k, t in leaves.items():
        t.grad = grads[k]
    return {t: grads[k] for k, t in leaves.items()}


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, in place.

    ``params`` maps names to Tensors, ``grads`` maps the same names to arrays.
    A parameter without a gradient is treated as having gradient zero.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NumericError(f"non-finite gradient for parameter {name!r} ({bad} entries) at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(fn: Callable, params, step: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(tape)`` must build a scalar loss from the tensors in ``params``
    (a list or dict of Tensors). With ``max_coords`` set, that many
    coordinates are sampled per parameter; otherwise all are checked.
    """
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    tape = Tape()
    loss = fn(tape)
    analytic = backward(tape, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in plist:
        ga = analytic.get(p, np.zeros_like(p.value))
        flat = np.arange(p.value.size)
        if max_coords is not None and p.value.size > max_coords:
            flat = rng.choice(flat, size=max_coords, replace=False)
        for k in flat:
            i, j = np.unravel_index(k, p.shape)
            orig = p.value[i, j]
            p.value[i, j] = orig + step
            up = fn(Tape()).value[0, 0]
            p.value[i, j] = orig - step
            down = fn(Tape()).value[0, 0]
            p.value[i, j] = orig
            num = (up - down) / (2.0 * step)
            a = ga[i, j]
            if not (np.isfinite(num) and np.isfinite(a)):
                return float("inf")
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def tensors_to_doc(named: dict) -> list:
    return [
        {"name": name, "shape": list(t.shape), "values": np.asarray(t.value).ravel().tolist()}
        for name, t in named.items()
    ]


def tensors_from_doc(doc: list) -> dict:
    return {
        item["name"]: parameter(np.array(item["values"], dtype=np.float64).reshape(item["shape"]), name=item["name"])
        for item in doc
    }


def save_tensors(path, named: dict, meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "tensors": tensors_to_doc(named)}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_tensors(path) -> tuple[dict, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return tensors_from_doc(doc["tensors"]), doc.get("meta", {})
