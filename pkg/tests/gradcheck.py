"""Central finite-difference gradient checking helpers shared by the tests."""

import numpy as np


def numeric_grad(f, x: np.ndarray, indices=None, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar-valued f at the selected flat indices.

    Returns an array shaped like x with untested entries set to nan when
    `indices` is given, else the full gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    if indices is None:
        indices = range(x.size)
        grad = np.zeros(x.size)
    else:
        grad = np.full(x.size, np.nan)
    for i in indices:
        xp = x.copy()
        xp.flat[i] += h
        fp = f(xp)
        xm = x.copy()
        xm.flat[i] -= h
        fm = f(xm)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst per-coordinate relative error over the entries where numeric is defined.

    `floor` bounds the denominator: below it, differences are measured against
    the floor itself, which keeps FD roundoff (~1e-8 absolute at float64) from
    blowing up coordinates whose true gradient is tiny.
    """
    mask = ~np.isnan(numeric)
    a = np.asarray(analytic)[mask]
    n = np.asarray(numeric)[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def sample_indices(size: int, k: int, seed: int = 0):
    """Deterministic subset of flat indices to probe in large parameter groups."""
    if size <= k:
        return list(range(size))
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(size, size=k, replace=False).tolist())
