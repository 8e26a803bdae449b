# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Philox4x32-10, parabola lower envelope, bump splatting."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, fabs, INFINITY
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

cdef uint32_t M0 = 0xD2511F53u
cdef uint32_t M1 = 0xCD9E8D57u
cdef uint32_t W0 = 0x9E3779B9u
cdef uint32_t W1 = 0xBB67AE85u


def philox4x32(const uint32_t[:] c0, const uint32_t[:] c1, const uint32_t[:] c2,
               const uint32_t[:] c3, const uint32_t[:] k0, const uint32_t[:] k1):
    """Philox4x32-10 over counter/key arrays of equal length; returns (M, 4) uint32."""
    cdef Py_ssize_t m = c0.shape[0], j
    cdef int r
    out = np.empty((m, 4), dtype=np.uint32)
    cdef uint32_t[:, :] o = out
    cdef uint32_t x0, x1, x2, x3, key0, key1, hi0, lo0, hi1, lo1
    cdef uint64_t p0, p1
    for j in range(m):
        x0 = c0[j]; x1 = c1[j]; x2 = c2[j]; x3 = c3[j]
        key0 = k0[j]; key1 = k1[j]
        for r in range(10):
            p0 = <uint64_t>M0 * x0
            p1 = <uint64_t>M1 * x2
            hi0 = <uint32_t>(p0 >> 32); lo0 = <uint32_t>p0
            hi1 = <uint32_t>(p1 >> 32); lo1 = <uint32_t>p1
            x0 = hi1 ^ x1 ^ key0
            x1 = lo1
            x2 = hi0 ^ x3 ^ key1
            x3 = lo0
            key0 = key0 + W0
            key1 = key1 + W1
        o[j, 0] = x0; o[j, 1] = x1; o[j, 2] = x2; o[j, 3] = x3
    return out


def lower_envelope(const double[:] V, double h, double[:] U, int64_t[:] arg):
    """U[i] = min_j V[j] + ((i-j)h)^2/2, ties to the largest j. Non-finite V skipped."""
    cdef Py_ssize_t n = V.shape[0], q, k, i, cnt = 0
    cdef double inv = 1.0 / (h * h), s, d
    cdef int64_t[:] v = np.empty(n, dtype=np.int64)
    cdef double[:] z = np.empty(n + 1, dtype=np.float64)
    cdef double[:] a = np.empty(n, dtype=np.float64)
    k = -1
    for q in range(n):
        if not (fabs(V[q]) < INFINITY):
            continue
        a[q] = V[q] * inv
        if k < 0:
            k = 0; v[0] = q; z[0] = -INFINITY; z[1] = INFINITY
            continue
        while True:
            s = (a[q] - a[v[k]]) / <double>(q - v[k]) + 0.5 * <double>(q + v[k])
            if s <= z[k] and k > 0:
                k -= 1
            else:
                break
        if s <= z[k]:
            # k == 0 and the new parabola dominates everywhere
            v[0] = q
            z[1] = INFINITY
            continue
        k += 1
        v[k] = q; z[k] = s; z[k + 1] = INFINITY
    if k < 0:
        for i in range(n):
            U[i] = INFINITY; arg[i] = -1
        return
    cnt = k
    k = 0
    for i in range(n):
        while k < cnt and z[k + 1] <= <double>i:
            k += 1
        d = <double>(i - v[k]) * h
        U[i] = V[v[k]] + 0.5 * d * d
        arg[i] = v[k]


def splat_bumps(const double[:] xs, double h, const double[:] eta, const double[:] xi,
                const double[:] kappa, double[:] F, double[:] f, double[:] f2, int order):
    """Accumulate xi*phi((x-eta)/kappa) (and derivatives up to `order`) on uniform nodes xs."""
    cdef Py_ssize_t n = xs.shape[0], m = eta.shape[0], p, i, lo, hi
    cdef double x0 = xs[0], y, t, kap
    for p in range(m):
        kap = kappa[p]
        lo = <Py_ssize_t>floor((eta[p] - kap - x0) / h) - 1
        hi = <Py_ssize_t>ceil((eta[p] + kap - x0) / h) + 1
        if lo < 0:
            lo = 0
        if hi > n - 1:
            hi = n - 1
        for i in range(lo, hi + 1):
            y = (xs[i] - eta[p]) / kap
            if fabs(y) < 1.0:
                t = 1.0 - y * y
                F[i] += xi[p] * t * t
                if order >= 1:
                    f[i] += xi[p] * (-4.0 * y * t) / kap
                if order >= 2:
                    f2[i] += xi[p] * (12.0 * y * y - 4.0) / (kap * kap)
