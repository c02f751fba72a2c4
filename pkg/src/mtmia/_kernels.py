"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``MTMIA_DISABLE_NUMBA=1`` to
force the numpy implementations (useful for debugging and for the benchmark
in ``benchmarks/bench_kernels.py``). Both backends accumulate in the same
sequential order, so distance results agree bit-for-bit.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MTMIA_DISABLE_NUMBA", "0") not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"

_CHUNK = 256


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def np_segment_sum(values, seg, num_segments):
    out = np.zeros((num_segments, values.shape[1]), dtype=np.float64)
    np.add.at(out, seg, values)
    return out


def np_segment_max(values, seg, num_segments):
    out = np.full((num_segments, values.shape[1]), -np.inf)
    np.maximum.at(out, seg, values)
    return out


def np_segment_softmax(logits, seg, num_segments):
    if logits.shape[0] == 0:
        return np.zeros_like(logits)
    mx = np_segment_max(logits, seg, num_segments)
    ex = np.exp(logits - mx[seg])
    den = np_segment_sum(ex, seg, num_segments)
    return ex / den[seg]


def _np_sq_dists(q, s):
    # sequential accumulation over columns, matching the compiled loop order
    acc = np.zeros((q.shape[0], s.shape[0]))
    for k in range(q.shape[1]):
        diff = q[:, k, None] - s[None, :, k]
        acc += diff * diff
    return acc


def np_min_sq_dist(q, s):
    out = np.empty(q.shape[0])
    for lo in range(0, q.shape[0], _CHUNK):
        out[lo:lo + _CHUNK] = _np_sq_dists(q[lo:lo + _CHUNK], s).min(axis=1)
    return out


def np_nn_sq_dist_excluding_self(s):
    out = np.empty(s.shape[0])
    for lo in range(0, s.shape[0], _CHUNK):
        d = _np_sq_dists(s[lo:lo + _CHUNK], s)
        rows = np.arange(d.shape[0])
        d[rows, rows + lo] = np.inf
        out[lo:lo + _CHUNK] = d.min(axis=1)
    return out


def np_ball_count(q, s, radius):
    out = np.empty(q.shape[0], dtype=np.int64)
    for lo in range(0, q.shape[0], _CHUNK):
        d = np.sqrt(_np_sq_dists(q[lo:lo + _CHUNK], s))
        out[lo:lo + _CHUNK] = (d <= radius).sum(axis=1)
    return out


def np_gauss_logsumexp(q, s, inv_bw):
    out = np.empty(q.shape[0])
    qs, ss = q * inv_bw, s * inv_bw
    for lo in range(0, q.shape[0], _CHUNK):
        e = -0.5 * _np_sq_dists(qs[lo:lo + _CHUNK], ss)
        mx = e.max(axis=1)
        out[lo:lo + _CHUNK] = mx + np.log(np.exp(e - mx[:, None]).sum(axis=1))
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def nb_segment_sum(values, seg, num_segments):
        n, k = values.shape
        out = np.zeros((num_segments, k))
        for i in range(n):
            s = seg[i]
            for j in range(k):
                out[s, j] += values[i, j]
        return out

    @njit(cache=True)
    def nb_segment_max(values, seg, num_segments):
        n, k = values.shape
        out = np.full((num_segments, k), -np.inf)
        for i in range(n):
            s = seg[i]
            for j in range(k):
                if values[i, j] > out[s, j]:
                    out[s, j] = values[i, j]
        return out

    @njit(cache=True)
    def nb_segment_softmax(logits, seg, num_segments):
        n, k = logits.shape
        mx = nb_segment_max(logits, seg, num_segments)
        ex = np.empty((n, k))
        den = np.zeros((num_segments, k))
        for i in range(n):
            s = seg[i]
            for j in range(k):
                e = np.exp(logits[i, j] - mx[s, j])
                ex[i, j] = e
                den[s, j] += e
        for i in range(n):
            s = seg[i]
            for j in range(k):
                ex[i, j] /= den[s, j]
        return ex

    @njit(cache=True)
    def nb_min_sq_dist(q, s):
        nq, d = q.shape
        ns = s.shape[0]
        out = np.empty(nq)
        for i in range(nq):
            best = np.inf
            for m in range(ns):
                acc = 0.0
                for k in range(d):
                    diff = q[i, k] - s[m, k]
                    acc += diff * diff
                if acc < best:
                    best = acc
            out[i] = best
        return out

    @njit(cache=True)
    def nb_nn_sq_dist_excluding_self(s):
        n, d = s.shape
        out = np.empty(n)
        for i in range(n):
            best = np.inf
            for m in range(n):
                if m == i:
                    continue
                acc = 0.0
                for k in range(d):
                    diff = s[i, k] - s[m, k]
                    acc += diff * diff
                if acc < best:
                    best = acc
            out[i] = best
        return out

    @njit(cache=True)
    def nb_ball_count(q, s, radius):
        nq, d = q.shape
        ns = s.shape[0]
        out = np.zeros(nq, dtype=np.int64)
        for i in range(nq):
            c = 0
            for m in range(ns):
                acc = 0.0
                for k in range(d):
                    diff = q[i, k] - s[m, k]
                    acc += diff * diff
                if np.sqrt(acc) <= radius:
                    c += 1
            out[i] = c
        return out

    @njit(cache=True)
    def nb_gauss_logsumexp(q, s, inv_bw):
        nq, d = q.shape
        ns = s.shape[0]
        qs = q * inv_bw
        ss = s * inv_bw
        out = np.empty(nq)
        e = np.empty(ns)
        for i in range(nq):
            mx = -np.inf
            for m in range(ns):
                acc = 0.0
                for k in range(d):
                    diff = qs[i, k] - ss[m, k]
                    acc += diff * diff
                e[m] = -0.5 * acc
                if e[m] > mx:
                    mx = e[m]
            tot = 0.0
            for m in range(ns):
                tot += np.exp(e[m] - mx)
            out[i] = mx + np.log(tot)
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def segment_sum(values, seg, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets given by ``seg``."""
    values, seg = _f64(values), _i64(seg)
    if USE_NUMBA:
        return nb_segment_sum(values, seg, int(num_segments))
    return np_segment_sum(values, seg, int(num_segments))


def segment_softmax(logits, seg, num_segments):
    """Column-wise softmax of ``logits`` within each segment."""
    logits, seg = _f64(logits), _i64(seg)
    if USE_NUMBA:
        return nb_segment_softmax(logits, seg, int(num_segments))
    return np_segment_softmax(logits, seg, int(num_segments))


def min_sq_dist(q, s):
    """Squared L2 distance from each row of ``q`` to its closest row of ``s``."""
    q, s = _f64(q), _f64(s)
    if USE_NUMBA:
        return nb_min_sq_dist(q, s)
    return np_min_sq_dist(q, s)


def nn_sq_dist_excluding_self(s):
    s = _f64(s)
    if USE_NUMBA:
        return nb_nn_sq_dist_excluding_self(s)
    return np_nn_sq_dist_excluding_self(s)


def ball_count(q, s, radius):
    """Number of rows of ``s`` within L2 ``radius`` of each row of ``q``."""
    q, s = _f64(q), _f64(s)
    if USE_NUMBA:
        return nb_ball_count(q, s, float(radius))
    return np_ball_count(q, s, float(radius))


def gauss_logsumexp(q, s, inv_bw):
    """log sum_m exp(-0.5 * ||(q_i - s_m) * inv_bw||^2) for each query row."""
    q, s, inv_bw = _f64(q), _f64(s), _f64(inv_bw)
    if USE_NUMBA:
        return nb_gauss_logsumexp(q, s, inv_bw)
    return np_gauss_logsumexp(q, s, inv_bw)
