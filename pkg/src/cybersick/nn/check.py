"""Central finite-difference gradient checking.

The numeric side only ever calls the forward evaluation, so it stays an
independent oracle for the analytic backward pass.
"""

from __future__ import annotations

import numpy as np


def fd_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Full central-difference gradient of scalar f at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def fd_gradient_at(f, x: np.ndarray, indices, eps: float = 1e-6) -> np.ndarray:
    """Central differences at a subset of flat indices of x."""
    out = np.zeros(len(indices), dtype=np.float64)
    flat = x.reshape(-1)
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * eps)
    return out


def rel_error(analytic: np.ndarray, numeric: np.ndarray,
              floor: float = 1e-4) -> float:
    """Worst-case relative disagreement |a - n| / max(|a|, |n|, floor).

    The floor keeps the score absolute where both gradients are tiny and
    the central-difference estimate is dominated by rounding noise.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
