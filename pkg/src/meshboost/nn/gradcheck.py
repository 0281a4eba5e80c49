"""Central finite differences for checking hand-written backward passes."""

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps an array like ``x`` to a scalar.

    ``x`` is perturbed in place and restored.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, np.float64).ravel()
    n = np.asarray(numeric, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-30)
    return float(np.linalg.norm(a - n) / denom)
