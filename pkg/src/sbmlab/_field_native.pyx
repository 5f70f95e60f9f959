# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pivoted Cholesky for the squared-exponential covariance.

Counterpart of ``sbmlab._field_py.pivoted_se``. The factor is written
transposed (one row per rank-one term) so that growing the rank only touches
contiguous memory.
"""
from libc.math cimport exp, sqrt


def pivoted_se(double[::1] x, double variance, double inv2l2, double thresh,
               double[:, ::1] Lt, double[::1] d):
    """Fill ``Lt[:r]`` and return ``r``, or -1 when ``Lt`` runs out of rows.

    ``d`` is scratch of length m and holds the residual diagonal on return.
    """
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t cap = Lt.shape[0]
    cdef Py_ssize_t i, k, p, r = 0
    cdef double dp, best, diff, acc, inv
    for i in range(m):
        d[i] = variance
    while r < m:
        p = 0
        best = d[0]
        for i in range(1, m):
            if d[i] > best:
                best = d[i]
                p = i
        dp = best
        if dp <= thresh:
            break
        if r == cap:
            return -1
        inv = 1.0 / sqrt(dp)
        for i in range(m):
            diff = x[i] - x[p]
            Lt[r, i] = variance * exp(-diff * diff * inv2l2)
        for k in range(r):
            acc = Lt[k, p]
            for i in range(m):
                Lt[r, i] -= Lt[k, i] * acc
        for i in range(m):
            Lt[r, i] *= inv
        for i in range(m):
            d[i] -= Lt[r, i] * Lt[r, i]
        d[p] = 0.0
        r += 1
    return r
