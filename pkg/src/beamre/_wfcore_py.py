"""Pure-Python Gauss-Seidel water-filling sweep.

Reference implementation of the kernel in ``_wfcore.pyx``; used when the
compiled extension is unavailable or ``BEAMRE_PURE_PYTHON`` is set.
"""

import math

import numpy as np


def refresh_den(rows, owner, base, x):
    """Denominators ``base_r + sum_m rows[r, m] * (T_m - x[owner_r, m])``."""
    T = x.sum(axis=0)
    return base + np.einsum("rm,rm->r", rows, T[None, :] - x[owner])


def _nu(xb, g, c, r, b):
    # value and derivative of the stationarity function in one beam
    val = g / (1.0 + g * xb) - c
    der = -(g * g) / ((1.0 + g * xb) * (1.0 + g * xb))
    for j in range(r.shape[0]):
        t = b[j] + r[j] * xb
        val += r[j] / t
        der -= (r[j] * r[j]) / (t * t)
    return val, der


def _root(x0, g, c, r, b, eps4, max_newton):
    """Nonnegative root of the beam stationarity function, 0 if inactive."""
    v0, _ = _nu(0.0, g, c, r, b)
    if v0 <= 0.0:
        return 0.0, 0
    xb = x0 if x0 > 0.0 else 0.0
    for _ in range(max_newton):
        v, dv = _nu(xb, g, c, r, b)
        if dv == 0.0:
            break
        xn = xb - v / dv
        if xn < 0.0:
            xn = 0.0
        if abs(xn - xb) <= eps4:
            return xn, 0
        xb = xn
    # bisection fallback: the function is strictly decreasing in xb
    lo, hi = 0.0, max(xb, 1.0)
    while _nu(hi, g, c, r, b)[0] > 0.0:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            return math.inf, 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _nu(mid, g, c, r, b)[0] > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= eps4:
            break
    return 0.5 * (lo + hi), 1


def solve_at_mu(rows, owner, gamma, base, d, x, mu, eps4, sweep_tol, max_sweeps, max_newton):
    """Run Gauss-Seidel sweeps at fixed ``mu`` until no beam moves by more
    than ``sweep_tol``. Updates ``x`` in place.

    Returns ``(sweeps, fallbacks)``.
    """
    K, M = x.shape
    den = refresh_den(rows, owner, base, x)
    cross = [np.flatnonzero(owner != k) for k in range(K)]
    fallbacks = 0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        moved = 0.0
        for k in range(K):
            idx = cross[k]
            for m in range(M):
                g = gamma[k, m]
                r = rows[idx, m]
                nz = r != 0.0
                r = r[nz]
                old = x[k, m]
                b = den[idx][nz] - r * old
                if g == 0.0 and r.size == 0:
                    new = 0.0
                else:
                    new, fb = _root(old, g, d[k, m] + mu, r, b, eps4, max_newton)
                    fallbacks += fb
                if new != old:
                    den[idx] += rows[idx, m] * (new - old)
                    x[k, m] = new
                    moved = max(moved, abs(new - old))
        if moved <= sweep_tol:
            break
    return sweeps, fallbacks
