# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled waterfilling kernels.

Both functions solve, per row of ``inv_gains`` (entries 1/g_k of the
scheduled users), the level equation ``sum_k 1/(x + 1/g_k) = lam``.  The map
is convex and strictly decreasing on (-min 1/g_k, inf), so Newton started
from a lower bound of the root climbs to it monotonically.
"""

import numpy as np

from libc.math cimport fabs, fmax


cdef inline double _root(const double[::1] a, double lam, double tol, int max_iter) noexcept nogil:
    cdef Py_ssize_t m = a.shape[0], j
    cdef double amin = a[0], amax = a[0], x, f, d, s
    cdef int it
    for j in range(1, m):
        if a[j] < amin:
            amin = a[j]
        if a[j] > amax:
            amax = a[j]
    x = fmax(1.0 / lam - amin, m / lam - amax)
    for it in range(max_iter):
        f = -lam
        d = 0.0
        for j in range(m):
            s = 1.0 / (x + a[j])
            f += s
            d += s * s
        if fabs(f) <= tol:
            break
        x += f / d
    return x


def waterfill_levels(double[:, ::1] inv_gains, double lam, double tol=1e-12, int max_iter=100):
    """Real root ``x`` of the level equation for every row."""
    cdef Py_ssize_t n = inv_gains.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] x = out
    with nogil:
        for i in range(n):
            x[i] = _root(inv_gains[i], lam, tol, max_iter)
    return out


def waterfill_power(double[:, ::1] inv_gains, double lam, double tol=1e-12, int max_iter=100):
    """Clamped level ``[x]^+`` for every row.

    Rows with ``sum_k g_k <= lam`` have a nonpositive root and are skipped.
    """
    cdef Py_ssize_t n = inv_gains.shape[0], m = inv_gains.shape[1], i, j
    cdef double gsum
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] p = out
    with nogil:
        for i in range(n):
            gsum = 0.0
            for j in range(m):
                gsum += 1.0 / inv_gains[i, j]
            if gsum <= lam:
                p[i] = 0.0
            else:
                p[i] = fmax(_root(inv_gains[i], lam, tol, max_iter), 0.0)
    return out
