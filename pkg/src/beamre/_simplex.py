"""Euclidean projections onto the power simplex and the capped simplex."""

import numpy as np


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Project ``v`` onto ``{x >= 0, sum(x) = total}`` (sort-based)."""
    shape = v.shape
    v = np.asarray(v, dtype=float).ravel()
    if total <= 0:
        return np.zeros(shape)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0).reshape(shape)


def project_capped(v: np.ndarray, total: float) -> np.ndarray:
    """Project ``v`` onto ``{x >= 0, sum(x) <= total}``."""
    x = np.maximum(np.asarray(v, dtype=float), 0.0)
    if x.sum() <= total:
        return x
    return project_simplex(v, total)
