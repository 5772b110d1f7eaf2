"""Shared test oracles: finite differences and brute-force index walks."""

import numpy as np

from lfsr.tensor import Tape, Tensor


def fd_gradient(fn, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar numpy function, in float64."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def tape_gradient(op, x: np.ndarray, *extra):
    """Analytic input-gradient of sum(op(x, *extra)) via the tape."""
    xt = Tensor(x.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        y = op(xt, *extra)
        loss = y.sum() if hasattr(y, "sum") else y
    grads = tape.backward(loss)
    return grads[xt]


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
