"""Shot-noise kick potential driven by a counter-based generator.

Each unit cell ``(n, [i, i+1))`` carries a Poisson number of bumps.  All
randomness for a cell is a pure function of ``(master_seed, n, i)``, so any
region of space-time can be generated lazily, in any order, on any worker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import kernels

_U32 = 0xFFFFFFFF
_TAG_CELL = 0x6B69636B  # purpose word for kick cells
_TWO53 = float(2**53)


@dataclass(frozen=True)
class KickPoint:
    tau: int
    eta: float
    xi: float
    kappa: float


@dataclass(frozen=True)
class Dist:
    """Law of a bump parameter: ``uniform`` / ``two_point`` (param=p) / ``fixed`` (param=value)."""

    kind: str = "uniform"
    param: float | None = None


@dataclass(frozen=True)
class EnvironmentConfig:
    master_seed: int = 0
    intensity: float = 1.0
    xi_dist: Dist = field(default_factory=Dist)
    kappa_dist: Dist = field(default_factory=Dist)
    bump: str = "quartic"

    def __post_init__(self):
        if not (self.intensity >= 0 and math.isfinite(self.intensity)):
            raise ValueError("intensity must be finite and nonnegative")
        if self.xi_dist.kind not in ("uniform", "two_point", "fixed"):
            raise ValueError(f"unknown xi_dist {self.xi_dist.kind!r}")
        if self.xi_dist.kind == "two_point" and not (0.0 <= (self.xi_dist.param or 0.0) <= 1.0):
            raise ValueError("two_point p must lie in [0, 1]")
        if self.kappa_dist.kind not in ("uniform", "fixed"):
            raise ValueError(f"unknown kappa_dist {self.kappa_dist.kind!r}")
        if self.kappa_dist.kind == "fixed":
            kv = self.kappa_dist.param
            if kv is None or not (0.0 < kv <= 1.0):
                raise ValueError("fixed kappa must lie in (0, 1]")
        if self.bump != "quartic":
            raise ValueError(f"unknown bump {self.bump!r}")
        if not (0 <= int(self.master_seed) < 2**64):
            raise ValueError("master_seed must fit in 64 bits")


def bump(y):
    """phi(y) = (1-y^2)^2 on |y|<1, zero outside."""
    y = np.asarray(y, dtype=np.float64)
    t = 1.0 - y * y
    return np.where(np.abs(y) < 1.0, t * t, 0.0)


@lru_cache(maxsize=64)
def _poisson_cdf(lam: float) -> np.ndarray:
    if lam == 0.0:
        return np.array([1.0])
    probs = [math.exp(-lam)]
    k = 0
    total = probs[0]
    while 1.0 - total > 1e-18 and k < 10_000:
        k += 1
        probs.append(probs[-1] * lam / k)
        total += probs[-1]
    return np.cumsum(probs)


def _u53(hi, lo):
    """Uniform on (0,1) from two 32-bit words, 53-bit resolution."""
    v = (hi.astype(np.uint64) >> np.uint64(5)) * np.uint64(1 << 26) + (lo.astype(np.uint64) >> np.uint64(6))
    return (v.astype(np.float64) + 0.5) / _TWO53


def _u32(w):
    return (w.astype(np.float64) + 0.5) / 4294967296.0


class _CellTable:
    """Bumps of a batch of cells, laid out contiguously cell after cell."""

    __slots__ = ("keys", "start", "count", "eta", "xi", "kappa")

    def __init__(self, keys, start, count, eta, xi, kappa):
        self.keys = keys
        self.start = start
        self.count = count
        self.eta = eta
        self.xi = xi
        self.kappa = kappa


def _cell_key(t, i):
    return (np.asarray(t, dtype=np.int64) << np.int64(32)) + (np.asarray(i, dtype=np.int64) + np.int64(2**31))


def _key_split(keys):
    t = keys >> np.int64(32)
    i = (keys & np.int64(_U32)) - np.int64(2**31)
    return t, i


class _PoissonSource:
    def __init__(self, cfg: EnvironmentConfig):
        self.cfg = cfg
        s = int(cfg.master_seed)
        self.k0 = np.uint32(s & _U32)
        self.k1 = np.uint32((s >> 32) & _U32)
        self.cdf = _poisson_cdf(float(cfg.intensity))

    def generate(self, keys: np.ndarray) -> _CellTable:
        t, i = _key_split(keys)
        m = len(keys)
        ct = (t & np.int64(_U32)).astype(np.uint32)
        ci = (i & np.int64(_U32)).astype(np.uint32)
        if len(self.cdf) == 1:
            count = np.zeros(m, dtype=np.int64)
        else:
            w = kernels.philox4x32(ct, ci, 0, _TAG_CELL, self.k0, self.k1)
            u = _u53(w[:, 0], w[:, 1])
            count = np.searchsorted(self.cdf, u, side="right").astype(np.int64)
            count = np.minimum(count, len(self.cdf) - 1)
        start = np.zeros(m, dtype=np.int64)
        if m:
            np.cumsum(count[:-1], out=start[1:])
        total = int(count.sum())
        if total == 0:
            e = np.empty(0)
            return _CellTable(keys, start, count, e, e, e)
        owner = np.repeat(np.arange(m), count)
        slot = np.arange(total) - start[owner] + 1
        w = kernels.philox4x32(ct[owner], ci[owner], slot.astype(np.uint32), _TAG_CELL, self.k0, self.k1)
        ii = i[owner].astype(np.float64)
        eta = ii + _u53(w[:, 0], w[:, 1])
        eta = np.minimum(eta, np.nextafter(ii + 1.0, -np.inf))
        cfg = self.cfg
        if cfg.xi_dist.kind == "uniform":
            xi = 2.0 * _u32(w[:, 2]) - 1.0
        elif cfg.xi_dist.kind == "two_point":
            xi = np.where(_u32(w[:, 2]) < float(cfg.xi_dist.param), 1.0, -1.0)
        else:
            xi = np.full(total, float(cfg.xi_dist.param))
        if cfg.kappa_dist.kind == "uniform":
            kappa = (4294967296.0 - w[:, 3].astype(np.float64)) / 4294967296.0
        else:
            kappa = np.full(total, float(cfg.kappa_dist.param))
        return _CellTable(keys, start, count, eta, xi, kappa)


class _PointSource:
    """Explicit, finite bump configuration (used for hand-built examples)."""

    def __init__(self, points: Iterable[KickPoint]):
        pts = sorted(points, key=lambda p: (p.tau, math.floor(p.eta)))
        for p in pts:
            if not (0.0 < p.kappa <= 1.0):
                raise ValueError("kappa must lie in (0, 1]")
        self.points = pts
        self.by_cell: dict[int, list[KickPoint]] = {}
        for p in pts:
            k = int(_cell_key(p.tau, math.floor(p.eta)))
            self.by_cell.setdefault(k, []).append(p)

    def generate(self, keys: np.ndarray) -> _CellTable:
        count = np.array([len(self.by_cell.get(int(k), ())) for k in keys], dtype=np.int64)
        start = np.zeros(len(keys), dtype=np.int64)
        if len(keys):
            np.cumsum(count[:-1], out=start[1:])
        flat = [p for k in keys for p in self.by_cell.get(int(k), ())]
        return _CellTable(
            keys, start, count,
            np.array([p.eta for p in flat], dtype=np.float64),
            np.array([p.xi for p in flat], dtype=np.float64),
            np.array([p.kappa for p in flat], dtype=np.float64),
        )


class Environment:
    """A kick environment, possibly viewed through an affine relabeling.

    A view with parameters ``(dn, b, s)`` maps a query at ``(n, x)`` to the
    base environment at ``(n + dn, x + b + s*n)``.  Shifts and shears compose
    into new views without touching the base randomness.
    """

    def __init__(self, config: EnvironmentConfig | None = None, *, points: Sequence[KickPoint] | None = None,
                 dn: int = 0, offset: float = 0.0, drift: float = 0.0, _source=None):
        if _source is not None:
            self._source = _source
            self.config = config
        elif points is not None:
            self._source = _PointSource(points)
            self.config = config
        else:
            self.config = config if config is not None else EnvironmentConfig()
            self._source = _PoissonSource(self.config)
        self.dn = int(dn)
        self.offset = float(offset)
        self.drift = float(drift)

    @classmethod
    def from_points(cls, points: Sequence[KickPoint]) -> "Environment":
        return cls(points=points)

    @classmethod
    def zero(cls) -> "Environment":
        return cls(EnvironmentConfig(intensity=0.0))

    # views -----------------------------------------------------------------
    def _view(self, dn, offset, drift) -> "Environment":
        return Environment(self.config, dn=dn, offset=offset, drift=drift, _source=self._source)

    def shift(self, dn: int, dx: float) -> "Environment":
        """Environment seen from (dn, dx): query (n, x) reads (n+dn, x+dx)."""
        return self._view(self.dn + int(dn), self.offset + float(dx) + self.drift * int(dn), self.drift)

    def shear(self, a: float, v: float) -> "Environment":
        """Query (n, x) reads the original at (n, x - a - v*n)."""
        return self._view(self.dn, self.offset - float(a), self.drift - float(v))

    def _base_offset(self, n):
        return self.offset + self.drift * np.asarray(n, dtype=np.float64)

    # cells -------------------------------------------------------------------
    def _table(self, keys: np.ndarray) -> _CellTable:
        return self._source.generate(keys)

    def cell_points(self, n: int, i: int) -> list[KickPoint]:
        """Bumps whose center lies in [i, i+1) at time n, in view coordinates."""
        off = float(self._base_offset(n))
        nb = int(n) + self.dn
        lo = math.floor(i + off)
        keys = _cell_key(np.array([nb, nb]), np.array([lo, lo + 1]))
        tab = self._table(keys)
        out = []
        for c in range(2):
            s, k = int(tab.start[c]), int(tab.count[c])
            for j in range(s, s + k):
                eta = tab.eta[j] - off
                if i <= eta < i + 1:
                    out.append(KickPoint(int(n), float(eta), float(tab.xi[j]), float(tab.kappa[j])))
        return out

    # evaluation --------------------------------------------------------------
    def evaluate(self, times, xs, order: int = 0):
        """Potential (and derivatives up to ``order``) at paired (time, x) queries.

        Returns a tuple of arrays ``(F, F', F'')`` truncated to ``order + 1``.
        """
        times = np.asarray(times, dtype=np.int64)
        xs = np.asarray(xs, dtype=np.float64)
        times, xs = np.broadcast_arrays(times, xs)
        shape = xs.shape
        times = times.ravel()
        xs = xs.ravel()
        xb = xs + self._base_offset(times)
        tb = times + self.dn
        ci = np.floor(xb).astype(np.int64)
        q = len(xs)
        out = [np.zeros(q) for _ in range(order + 1)]
        if q == 0:
            return tuple(o.reshape(shape) for o in out)
        want = np.concatenate([_cell_key(tb, ci + d) for d in (-1, 0, 1)])
        keys = np.unique(want)
        tab = self._table(keys)
        if len(tab.eta) == 0:
            return tuple(o.reshape(shape) for o in out)
        for d in (-1, 0, 1):
            pos = np.searchsorted(keys, _cell_key(tb, ci + d))
            cnt = tab.count[pos]
            st = tab.start[pos]
            for j in range(int(cnt.max()) if q else 0):
                sel = np.nonzero(cnt > j)[0]
                pid = st[sel] + j
                kap = tab.kappa[pid]
                xi = tab.xi[pid]
                y = (xb[sel] - tab.eta[pid]) / kap
                inside = np.abs(y) < 1.0
                if not inside.any():
                    continue
                sel, y, kap, xi = sel[inside], y[inside], kap[inside], xi[inside]
                t = 1.0 - y * y
                out[0][sel] += xi * t * t
                if order >= 1:
                    out[1][sel] += xi * (-4.0 * y * t) / kap
                if order >= 2:
                    out[2][sel] += xi * (12.0 * y * y - 4.0) / (kap * kap)
        return tuple(o.reshape(shape) for o in out)

    def potential(self, n: int, x: float) -> float:
        return float(self.evaluate([n], [x])[0][0])

    def force(self, n: int, x: float) -> float:
        """Spatial derivative of the potential at (n, x)."""
        return float(self.evaluate([n], [x], order=1)[1][0])

    def potential_max(self, n: int, x: float, resolution: float = 2.0**-10) -> float:
        """max |F(n, y)| over y in [x, x+1]: dense samples plus bump centers."""
        m = int(round(1.0 / resolution))
        ys = float(x) + np.arange(m + 1) * (1.0 / m)
        centers = []
        for i in range(math.floor(x), math.floor(x) + 2):
            centers += [p.eta for p in self.cell_points(n, i) if x <= p.eta <= x + 1]
        ys = np.concatenate([ys, np.asarray(centers, dtype=np.float64)])
        F = self.evaluate(np.full(len(ys), int(n)), ys)[0]
        return float(np.max(np.abs(F)))

    def grid_values(self, n: int, xs: np.ndarray, h: float, order: int = 0):
        """Potential on the uniform node array ``xs`` (spacing ``h``) at time n.

        Uses the bump-splat kernel; values agree bitwise with ``evaluate``.
        """
        xs = np.asarray(xs, dtype=np.float64)
        off = float(self._base_offset(n))
        xb = xs + off
        nb = int(n) + self.dn
        lo = math.floor(xb[0]) - 1
        hi = math.floor(xb[-1]) + 1
        cells = np.arange(lo, hi + 1, dtype=np.int64)
        tab = self._table(_cell_key(np.full(len(cells), nb), cells))
        F, f, f2 = kernels.splat_bumps(xb, h, tab.eta, tab.xi, tab.kappa, order=order)
        return tuple(v for v in (F, f, f2)[: order + 1])


    def cell_lower_bound(self, n: int, xs: np.ndarray, h: float) -> np.ndarray:
        """Lower bound of F(n, .) over each cell [x - h/2, x + h/2] of the uniform nodes ``xs``.

        Sum over bumps of each bump's own minimum on the cell, so no well narrower
        than the grid spacing is lost.
        """
        xs = np.asarray(xs, dtype=np.float64)
        off = float(self._base_offset(n))
        xb0 = float(xs[0]) + off
        N = len(xs)
        nb = int(n) + self.dn
        lo = math.floor(xb0 - 0.5 * h) - 1
        hi = math.floor(xb0 + (N - 1) * h + 0.5 * h) + 1
        cells = np.arange(lo, hi + 1, dtype=np.int64)
        tab = self._table(_cell_key(np.full(len(cells), nb), cells))
        out = np.zeros(N)
        if len(tab.eta) == 0:
            return out
        eta, xi, kap = tab.eta, tab.xi, tab.kappa
        i0 = np.maximum(np.ceil((eta - kap - 0.5 * h - xb0) / h), 0).astype(np.int64)
        i1 = np.minimum(np.floor((eta + kap + 0.5 * h - xb0) / h), N - 1).astype(np.int64)
        cnt = np.maximum(i1 - i0 + 1, 0)
        if cnt.sum() == 0:
            return out
        b = np.repeat(np.arange(len(eta)), cnt)
        first = np.repeat(np.cumsum(cnt) - cnt, cnt)
        node = i0[b] + (np.arange(len(b)) - first)
        dist = np.abs(xb0 + node * h - eta[b])
        reach = np.where(xi[b] < 0.0, np.maximum(dist - 0.5 * h, 0.0), dist + 0.5 * h)
        val = xi[b] * bump(reach / kap[b])
        return out + np.bincount(node, weights=val, minlength=N)


def make_environment(seed: int, base: EnvironmentConfig | None = None) -> Environment:
    base = base if base is not None else EnvironmentConfig()
    return Environment(replace(base, master_seed=int(seed)))
