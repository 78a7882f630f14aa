"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a| + |n|, floor) over the compared entries, scaled globally."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.max(np.abs(a)) + np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / denom) if a.size else 0.0
