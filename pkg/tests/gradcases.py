"""Finite-difference oracle and the primitive cases shared by the gradient tests."""
import numpy as np

from mtmia.diffcore import Tape, backward, constant, grad_check, parameter

STEP = 1e-5


def fd_oracle(f, x: np.ndarray, step=STEP) -> np.ndarray:
    """Central differences of scalar ``f(array)`` in every coordinate."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f(x)
        x[idx] = orig - step
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n)))


def primitive_cases(rng):
    A = rng.normal(size=(4, 3))
    B = rng.normal(size=(3, 5))
    row = rng.normal(size=(1, 3))
    seg = np.array([0, 2, 2, 0])
    idx = np.array([3, 0, 3, 1, 2])
    yield "matmul", [A, B], lambda t, a, b: t.matmul(a, b)
    yield "add", [A, A + 1], lambda t, a, b: t.add(a, b)
    yield "add-broadcast", [A, row], lambda t, a, b: t.add(a, b)
    yield "mul", [A, A - 0.5], lambda t, a, b: t.mul(a, b)
    yield "mul-broadcast", [A, rng.normal(size=(4, 1))], lambda t, a, b: t.mul(a, b)
    yield "scale", [A], lambda t, a: t.scale(a, -1.7)
    yield "concat", [A, rng.normal(size=(4, 2))], lambda t, a, b: t.concat([a, b])
    yield "sum_all", [A], lambda t, a: t.sum_all(a)
    yield "gather", [A], lambda t, a: t.gather(a, idx)
    yield "segment_sum", [A], lambda t, a: t.segment_sum(a, seg, 3)
    yield "segment_softmax", [A], lambda t, a: t.segment_softmax(a, seg, 3)
    yield "sigmoid", [A], lambda t, a: t.sigmoid(a)
    yield "tanh", [A], lambda t, a: t.tanh(a)
    # keep inputs away from the kink at 0
    yield "leaky_relu", [np.where(np.abs(A) < 0.05, 0.3, A)], lambda t, a: t.leaky_relu(a, 0.2)
    target = rng.normal(size=(4, 3))
    yield "l2_loss", [A], lambda t, a: t.l2_loss(a, target, 0.7)


N_PRIMITIVE_CASES = 15


def primitive_errors(case: int, seed: int) -> tuple[str, float, float]:
    """Worst relative error of one primitive against ``fd_oracle`` and against ``grad_check``."""
    rng = np.random.default_rng(seed)
    name, inputs, op = list(primitive_cases(rng))[case]
    params = [parameter(v.copy()) for v in inputs]
    w = rng.normal(size=op(Tape(record=False), *params).shape)

    def fn(tape):
        return tape.sum_all(tape.mul(op(tape, *params), constant(w)))

    tape = Tape()
    grads = backward(tape, fn(tape))
    worst = 0.0
    for k, p in enumerate(params):
        def scalar(v, k=k):
            saved = params[k].value
            params[k].value = v
            out = float(np.sum(op(Tape(record=False), *params).value * w))
            params[k].value = saved
            return out

        worst = max(worst, float(rel_err(grads[p], fd_oracle(scalar, p.value.copy()))))
    return name, worst, grad_check(fn, params)
