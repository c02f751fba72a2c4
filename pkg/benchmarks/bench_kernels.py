"""Compare the numba and numpy kernel backends on attack-sized inputs.

    python3 benchmarks/bench_kernels.py [--queries 1000] [--synth 1000] [--dim 5] [--repeat 5]

Each kernel is warmed up once (so numba compile time is excluded) and then
timed with ``timeit``; the best of ``--repeat`` runs is reported. Results are
also checked for agreement between the two backends.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from mtmia import _kernels as K


def _cases(rng, n_q, n_s, dim, n_rows, n_seg):
    q = rng.standard_normal((n_q, dim))
    s = rng.standard_normal((n_s, dim))
    inv_bw = np.full(dim, 2.0)
    radius = 1.0
    vals = rng.standard_normal((n_rows, 16))
    seg = np.sort(rng.integers(0, n_seg, size=n_rows))
    return {
        "min_sq_dist": ((q, s), np.array_equal),
        "nn_sq_dist_excluding_self": ((s,), np.array_equal),
        "ball_count": ((q, s, radius), np.array_equal),
        "gauss_logsumexp": ((q, s, inv_bw), lambda a, b: np.allclose(a, b, rtol=1e-12, atol=0)),
        "segment_sum": ((vals, seg, n_seg), lambda a, b: np.allclose(a, b, rtol=1e-12, atol=1e-12)),
        "segment_softmax": ((vals, seg, n_seg), lambda a, b: np.allclose(a, b, rtol=1e-12, atol=1e-15)),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=1000)
    ap.add_argument("--synth", type=int, default=1000)
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--rows", type=int, default=100_000, help="rows for the segment kernels")
    ap.add_argument("--segments", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    cases = _cases(np.random.default_rng(args.seed), args.queries, args.synth, args.dim, args.rows, args.segments)
    print(f"{'kernel':28s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}  agree")
    for name, (inputs, same) in cases.items():
        np_fn, nb_fn = getattr(K, f"np_{name}"), getattr(K, f"nb_{name}")
        a, b = np_fn(*inputs), nb_fn(*inputs)  # warm-up and compile
        t_np = min(timeit.repeat(lambda: np_fn(*inputs), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: nb_fn(*inputs), number=1, repeat=args.repeat))
        print(f"{name:28s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:8.1f}  {bool(same(a, b))}")


if __name__ == "__main__":
    main()
