"""Pure numpy/Python versions of the compiled kernels, bit-compatible with them."""

from __future__ import annotations

import math

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = np.uint64(0xFFFFFFFF)


def philox4x32(c0, c1, c2, c3, k0, k1):
    x0, x1, x2, x3 = (np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    key0 = np.asarray(k0, dtype=np.uint64)
    key1 = np.asarray(k1, dtype=np.uint64)
    for _ in range(10):
        p0 = _M0 * x0
        p1 = _M1 * x2
        x0, x1, x2, x3 = (
            (p1 >> np.uint64(32)) ^ x1 ^ key0,
            p1 & _MASK,
            (p0 >> np.uint64(32)) ^ x3 ^ key1,
            p0 & _MASK,
        )
        key0 = (key0 + np.uint64(_W0)) & _MASK
        key1 = (key1 + np.uint64(_W1)) & _MASK
    return np.stack([x0, x1, x2, x3], axis=1).astype(np.uint32)


def lower_envelope(V, h, U, arg):
    n = len(V)
    inv = 1.0 / (h * h)
    v = [0] * n
    z = [0.0] * (n + 1)
    a = [0.0] * n
    Vl = V.tolist()
    k = -1
    for q in range(n):
        if not math.isfinite(Vl[q]):
            continue
        a[q] = Vl[q] * inv
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -math.inf
            z[1] = math.inf
            continue
        while True:
            s = (a[q] - a[v[k]]) / float(q - v[k]) + 0.5 * float(q + v[k])
            if s <= z[k] and k > 0:
                k -= 1
            else:
                break
        if s <= z[k]:
            v[0] = q
            z[1] = math.inf
            continue
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf
    if k < 0:
        U[:] = math.inf
        arg[:] = -1
        return
    cnt = k
    k = 0
    out_arg = [0] * n
    for i in range(n):
        while k < cnt and z[k + 1] <= float(i):
            k += 1
        out_arg[i] = v[k]
    arg[:] = out_arg
    d = (np.arange(n, dtype=np.float64) - arg.astype(np.float64)) * h
    U[:] = V[arg] + 0.5 * d * d


def splat_bumps(xs, h, eta, xi, kappa, F, f, f2, order):
    n = len(xs)
    x0 = xs[0]
    for p in range(len(eta)):
        kap = kappa[p]
        lo = max(int(math.floor((eta[p] - kap - x0) / h)) - 1, 0)
        hi = min(int(math.ceil((eta[p] + kap - x0) / h)) + 1, n - 1)
        if hi < lo:
            continue
        y = (xs[lo:hi + 1] - eta[p]) / kap
        m = np.abs(y) < 1.0
        if not m.any():
            continue
        idx = np.nonzero(m)[0] + lo
        y = y[m]
        t = 1.0 - y * y
        F[idx] += xi[p] * t * t
        if order >= 1:
            f[idx] += xi[p] * (-4.0 * y * t) / kap
        if order >= 2:
            f2[idx] += xi[p] * (12.0 * y * y - 4.0) / (kap * kap)
