"""Backend selection for the hot kernels.

The compiled extension is used when importable. Setting ``KICKWAVE_BACKEND=pure``
forces the numpy fallback; ``KICKWAVE_BACKEND=compiled`` makes a missing
extension an import error instead of a silent fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pure

_choice = os.environ.get("KICKWAVE_BACKEND", "auto").lower()
_compiled = None
if _choice != "pure":
    try:
        from . import _core as _compiled
    except ImportError:
        if _choice == "compiled":
            raise
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "pure"
_impl = _compiled if _compiled is not None else _pure


def backend_module(name: str | None = None):
    if name is None:
        return _impl
    if name == "pure":
        return _pure
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def philox4x32(c0, c1, c2, c3, k0, k1, backend=None):
    """Philox4x32-10 block function, vectorized. All inputs broadcast to one length."""
    arrs = np.broadcast_arrays(*(np.asarray(a, dtype=np.uint32) for a in (c0, c1, c2, c3, k0, k1)))
    arrs = [np.ascontiguousarray(a.ravel()) for a in arrs]
    return backend_module(backend).philox4x32(*arrs)


def lower_envelope(V, h, backend=None):
    """Min-plus convolution with the kernel (x-y)^2/2 on a uniform grid.

    Returns (U, argmin); ties pick the rightmost minimizer.
    """
    V = np.ascontiguousarray(V, dtype=np.float64)
    U = np.empty_like(V)
    arg = np.empty(len(V), dtype=np.int64)
    backend_module(backend).lower_envelope(V, float(h), U, arg)
    return U, arg


def splat_bumps(xs, h, eta, xi, kappa, order=0, backend=None):
    """Sum of xi*phi((x-eta)/kappa) over bumps at uniform nodes xs, with derivatives."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    n = len(xs)
    F = np.zeros(n)
    f = np.zeros(n) if order >= 1 else np.zeros(1)
    f2 = np.zeros(n) if order >= 2 else np.zeros(1)
    if n and len(eta):
        backend_module(backend).splat_bumps(
            xs, float(h),
            np.ascontiguousarray(eta, dtype=np.float64),
            np.ascontiguousarray(xi, dtype=np.float64),
            np.ascontiguousarray(kappa, dtype=np.float64),
            F, f, f2, int(order))
    return F, (f if order >= 1 else None), (f2 if order >= 2 else None)


def naive_envelope(V, h, block: int = 128, with_arg: bool = True):
    """O(N^2) reference for lower_envelope, same tie rule (rightmost minimizer).

    Brute force over candidate columns. A first scan over nearby columns gives
    an upper bound Ub on each row minimum; a column j with
    min(V) + (x_i - x_j)^2/2 > Ub_i loses strictly, so a block of rows is
    rescanned only out to sqrt(2 (max Ub - min V)). No ties are skipped.
    With ``with_arg=False`` only U is computed (argmin is returned as None).
    """
    V = np.asarray(V, dtype=np.float64)
    n = len(V)
    d = np.arange(-(n - 1), n) * h
    q = (0.5 * d * d)[::-1]
    # row i of the cost matrix is q[n-1-i : 2n-1-i] + V
    rows = np.lib.stride_tricks.sliding_window_view(q, n)[::-1]
    U = np.empty(n)
    arg = np.empty(n, dtype=np.int64) if with_arg else None
    vmin = V.min()

    def scan(a, b, R):
        lo, hi = max(a - R, 0), min(b + R, n)
        c = rows[a:b, lo:hi] + V[lo:hi]
        c.min(axis=1, out=U[a:b])
        if with_arg:
            arg[a:b] = hi - 1 - np.argmin(c[:, ::-1], axis=1)

    R0 = 64
    for a in range(0, n, block):
        b = min(a + block, n)
        scan(a, b, R0)
        R = int(np.ceil(np.sqrt(2.0 * (U[a:b].max() - vmin)) / h)) + 1
        if R > R0:
            scan(a, b, R)
    return U, arg
