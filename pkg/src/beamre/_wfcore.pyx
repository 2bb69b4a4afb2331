# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Gauss-Seidel water-filling sweep.

Mirrors ``_wfcore_py.solve_at_mu`` operation for operation.
"""

import numpy as np

from libc.math cimport fabs, INFINITY


cdef inline void _nu(double xb, double g, double c, const double[:, ::1] rows,
                     Py_ssize_t m, const Py_ssize_t[::1] idx, Py_ssize_t nidx,
                     const double[::1] b, double* val, double* der) noexcept nogil:
    cdef double v = g / (1.0 + g * xb) - c
    cdef double dv = -(g * g) / ((1.0 + g * xb) * (1.0 + g * xb))
    cdef double r, t
    cdef Py_ssize_t j
    for j in range(nidx):
        r = rows[idx[j], m]
        if r == 0.0:
            continue
        t = b[j] + r * xb
        v += r / t
        dv -= (r * r) / (t * t)
    val[0] = v
    der[0] = dv


cdef double _root(double x0, double g, double c, const double[:, ::1] rows, Py_ssize_t m,
                  const Py_ssize_t[::1] idx, Py_ssize_t nidx, const double[::1] b,
                  double eps4, int max_newton, int* fallback) noexcept nogil:
    cdef double v, dv, xb, xn, lo, hi, mid
    cdef int it
    fallback[0] = 0
    _nu(0.0, g, c, rows, m, idx, nidx, b, &v, &dv)
    if v <= 0.0:
        return 0.0
    xb = x0 if x0 > 0.0 else 0.0
    for it in range(max_newton):
        _nu(xb, g, c, rows, m, idx, nidx, b, &v, &dv)
        if dv == 0.0:
            break
        xn = xb - v / dv
        if xn < 0.0:
            xn = 0.0
        if fabs(xn - xb) <= eps4:
            return xn
        xb = xn
    fallback[0] = 1
    lo = 0.0
    hi = xb if xb > 1.0 else 1.0
    _nu(hi, g, c, rows, m, idx, nidx, b, &v, &dv)
    while v > 0.0:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            return INFINITY
        _nu(hi, g, c, rows, m, idx, nidx, b, &v, &dv)
    for it in range(200):
        mid = 0.5 * (lo + hi)
        _nu(mid, g, c, rows, m, idx, nidx, b, &v, &dv)
        if v > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= eps4:
            break
    return 0.5 * (lo + hi)


def refresh_den(rows, owner, base, x):
    T = x.sum(axis=0)
    return base + np.einsum("rm,rm->r", rows, T[None, :] - x[owner])


def solve_at_mu(const double[:, ::1] rows, owner, const double[:, ::1] gamma,
                base, const double[:, ::1] d, double[:, ::1] x, double mu,
                double eps4, double sweep_tol, int max_sweeps, int max_newton):
    """Gauss-Seidel sweeps at fixed ``mu``; updates ``x`` in place.

    Returns ``(sweeps, fallbacks)``.
    """
    cdef Py_ssize_t K = x.shape[0], M = x.shape[1], R = rows.shape[0]
    cdef double[::1] den = refresh_den(np.asarray(rows), owner, base, np.asarray(x))
    cdef Py_ssize_t[::1] own = np.ascontiguousarray(owner, dtype=np.intp)
    cdef Py_ssize_t[::1] idx = np.empty(R, dtype=np.intp)
    cdef double[::1] b = np.empty(R, dtype=np.float64)
    cdef Py_ssize_t k, m, j, nidx, r
    cdef double g, old, new, moved, rv
    cdef int sweeps = 0, fallbacks = 0, fb = 0, s
    with nogil:
        for s in range(1, max_sweeps + 1):
            sweeps = s
            moved = 0.0
            for k in range(K):
                nidx = 0
                for r in range(R):
                    if own[r] != k:
                        idx[nidx] = r
                        nidx += 1
                for m in range(M):
                    g = gamma[k, m]
                    old = x[k, m]
                    for j in range(nidx):
                        b[j] = den[idx[j]] - rows[idx[j], m] * old
                    if g == 0.0:
                        rv = 0.0
                        for j in range(nidx):
                            rv += rows[idx[j], m]
                        if rv == 0.0:
                            new = 0.0
                        else:
                            new = _root(old, g, d[k, m] + mu, rows, m, idx, nidx, b,
                                        eps4, max_newton, &fb)
                            fallbacks += fb
                    else:
                        new = _root(old, g, d[k, m] + mu, rows, m, idx, nidx, b,
                                    eps4, max_newton, &fb)
                        fallbacks += fb
                    if new != old:
                        for j in range(nidx):
                            den[idx[j]] += rows[idx[j], m] * (new - old)
                        x[k, m] = new
                        if fabs(new - old) > moved:
                            moved = fabs(new - old)
            if moved <= sweep_tol:
                break
    return sweeps, fallbacks
