"""Discrete Hopf-Lax evolution of potentials on a uniform grid.

One step from time n to n+1:

    W'(x) = min_y [ W(y) + p F(n, y) + (x - y)^2 / 2 ] + (1 - p) F(n+1, x)

The minimum over grid nodes is computed exactly with a lower envelope of
parabolas.  Argmins are nondecreasing in x, and ties go to the rightmost node.

Every profile carries a *trusted* index range ``[lo, hi)``: nodes whose whole
grid backward path stayed inside earlier trusted ranges and whose one-step
minimum provably beats any off-grid candidate (under a linear extrapolation
of the edge values).  Only trusted values are insensitive to the finite domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .environment import Environment

PENALTY = 1.0e9


@dataclass(frozen=True)
class GridSpec:
    """Nodes ``x_min + i*h`` for ``i in range(count)``."""

    x_min: float
    h: float
    count: int

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("grid spacing must be positive")
        if self.count < 2:
            raise ValueError("grid needs at least two nodes")

    @classmethod
    def centered(cls, center: float, half_width: float, h: float) -> "GridSpec":
        """Grid aligned to multiples of h, covering [center - hw, center + hw]."""
        lo = math.floor((center - half_width) / h)
        hi = math.ceil((center + half_width) / h)
        return cls(lo * h, h, hi - lo + 1)

    @cached_property
    def x(self) -> np.ndarray:
        x = self.x_min + np.arange(self.count) * self.h
        x.setflags(write=False)
        return x

    @property
    def x_max(self) -> float:
        return self.x_min + (self.count - 1) * self.h

    def index_of(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.h))
        if not 0 <= i < self.count:
            raise ValueError(f"x={x} lies outside the grid")
        return i


@dataclass
class GridProfile:
    grid: GridSpec
    time: int
    values: np.ndarray
    kind: str = "potential"
    trusted: tuple[int, int] | None = None
    flags: set = field(default_factory=set)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.count,):
            raise ValueError("values do not match the grid")
        if self.trusted is None:
            self.trusted = (0, self.grid.count)

    def is_trusted(self, i: int) -> bool:
        return self.trusted[0] <= i < self.trusted[1]

    def trusted_mask(self) -> np.ndarray:
        m = np.zeros(self.grid.count, dtype=bool)
        m[self.trusted[0]:self.trusted[1]] = True
        return m


@dataclass
class EvolveParams:
    """``sampling='node'`` samples F at the nodes; ``'cellmin'`` uses a lower bound of F
    over each node's cell [x - h/2, x + h/2], so wells narrower than h are not missed."""

    p: float = 1.0
    backend: str | None = None
    sampling: str = "node"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.sampling not in ("node", "cellmin"):
            raise ValueError(f"unknown sampling {self.sampling!r}")


def sample_forcing(env: Environment, n: int, grid: GridSpec, sampling: str = "node"):
    if sampling == "node":
        return env.grid_values(n, grid.x, grid.h)[0]
    return env.cell_lower_bound(n, grid.x, grid.h)


class BackpointerStack:
    """Argmin maps of consecutive steps; ``maps[k]`` sends nodes at time start+k+1 to time start+k."""

    def __init__(self, grid: GridSpec, start_time: int):
        self.grid = grid
        self.start_time = int(start_time)
        self.maps: list[np.ndarray] = []
        self.trusted: list[tuple[int, int]] = []

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.maps)

    def push(self, arg: np.ndarray, trusted: tuple[int, int]):
        self.maps.append(np.asarray(arg, dtype=np.int32))
        self.trusted.append(trusted)

    def step_map(self, time: int) -> np.ndarray:
        """Map from nodes at ``time`` to their argmins at ``time - 1``."""
        k = int(time) - self.start_time - 1
        if not 0 <= k < len(self.maps):
            raise IndexError(f"no step into time {time}")
        return self.maps[k]

    def trusted_at(self, time: int) -> tuple[int, int]:
        k = int(time) - self.start_time - 1
        if k < 0:
            return (0, self.grid.count)
        return self.trusted[k]

    def nbytes(self) -> int:
        return sum(m.nbytes for m in self.maps)


def quadratic_envelope(V: np.ndarray, grid: GridSpec, backend: str | None = None):
    """Exact min over nodes of V(y) + (x-y)^2/2 at every node x; returns (U, argmin)."""
    return kernels.lower_envelope(V, grid.h, backend=backend)


def _edge_bounds(V: np.ndarray, h: float, allowance: float, width: int):
    """Lower bounds on V(y) + (x - y)^2/2 over y beyond each grid edge.

    V is extrapolated past an edge with its steepest descending finite-difference
    slope over the outer ``width`` nodes, less ``allowance`` for unseen forcing.
    Returns two functions of the node distances to the left / right edge.
    """
    k = min(max(width, 2), len(V))
    sL = max(0.0, float(np.max(np.diff(V[:k]))) / h)
    sR = max(0.0, float(-np.min(np.diff(V[-k:]))) / h)

    def lb(V0, s, d):
        return V0 - allowance + np.where(d >= s, 0.5 * d * d, s * d - 0.5 * s * s)

    return (lambda d: lb(V[0], sL, d)), (lambda d: lb(V[-1], sR, d))


def _trusted_after(arg: np.ndarray, prev: tuple[int, int], count: int, certified=None) -> tuple[int, int]:
    """Longest run of nodes whose argmin lies strictly inside the previous trusted range
    (and off the edge nodes), restricted to ``certified`` nodes when given."""
    lo = max(prev[0], 1)
    hi = min(prev[1], count - 1)
    if hi <= lo:
        return (0, 0)
    ok = (arg >= lo) & (arg < hi)
    if certified is not None:
        ok &= certified
    if not ok.any():
        return (0, 0)
    # longest run of True
    edges = np.diff(np.concatenate([[0], ok.view(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    j = int(np.argmax(stops - starts))
    return (int(starts[j]), int(stops[j]))


def evolve_one(env: Environment, W: GridProfile, params: EvolveParams | None = None,
               forcing: tuple[np.ndarray, np.ndarray] | None = None):
    """One Hopf-Lax step. Returns (profile at W.time+1, argmin array)."""
    params = params or EvolveParams()
    g = W.grid
    n = W.time
    p = params.p
    if forcing is None:
        Fn = sample_forcing(env, n, g, params.sampling) if p != 0.0 else None
        Fn1 = sample_forcing(env, n + 1, g, params.sampling) if p != 1.0 else None
    else:
        Fn, Fn1 = forcing
    V = W.values + p * Fn if p != 0.0 else W.values
    U, arg = quadratic_envelope(V, g, params.backend)
    flags = set()
    if arg.min() == 0 or arg.max() == g.count - 1:
        flags.add("boundary_contact")
    allowance = 2.0 * float(np.max(np.abs(Fn if p != 0.0 else Fn1)))
    left, right = _edge_bounds(V, g.h, allowance, int(round(1.0 / g.h)))
    d = np.arange(g.count) * g.h
    certified = (U <= left(d)) & (U <= right(d[::-1]))
    trusted = _trusted_after(arg, W.trusted, g.count, certified)
    if p != 1.0:
        U = U + (1.0 - p) * Fn1
    return GridProfile(g, n + 1, U, "potential", trusted, flags), arg


def evolve(env: Environment, W: GridProfile, n1: int, params: EvolveParams | None = None,
           keep_profiles: bool = False, keep_maps: str = "all"):
    """Evolve W from W.time to n1. Returns (final profile, BackpointerStack[, profiles]).

    ``keep_maps='last'`` stores only the final argmin map (the stack then
    supports velocity extraction but not tracing).
    """
    params = params or EvolveParams()
    if n1 < W.time:
        raise ValueError("n1 must not precede the initial time")
    stack = BackpointerStack(W.grid, W.time)
    profiles = [W] if keep_profiles else None
    flags = set(W.flags)
    cur = W
    g = W.grid
    nxt_F = None
    for n in range(W.time, n1):
        Fn = nxt_F if nxt_F is not None else sample_forcing(env, n, g, params.sampling)
        Fn1 = sample_forcing(env, n + 1, g, params.sampling) if params.p != 1.0 else None
        cur, arg = evolve_one(env, cur, params, forcing=(Fn, Fn1))
        nxt_F = Fn1
        flags |= cur.flags
        if keep_maps == "all" or n == n1 - 1:
            stack.push(arg, cur.trusted)
        else:
            stack.start_time += 1
        if keep_profiles:
            profiles.append(cur)
    cur.flags = flags
    if keep_profiles:
        return cur, stack, profiles
    return cur, stack


def point_profile(grid: GridSpec, time: int, x: float, penalty: float = PENALTY) -> GridProfile:
    """Initial potential pinning the start to the node nearest x."""
    v = np.full(grid.count, penalty)
    v[grid.index_of(x)] = 0.0
    return GridProfile(grid, time, v, "potential")


def linear_profile(grid: GridSpec, time: int, v: float) -> GridProfile:
    return GridProfile(grid, time, v * grid.x, "potential")


def velocity_from(W: GridProfile, argmin: np.ndarray) -> GridProfile:
    """Grid velocity u(x) = x - y*(x) from the argmin of the step that produced W."""
    g = W.grid
    u = (np.arange(g.count) - np.asarray(argmin, dtype=np.float64)) * g.h
    return GridProfile(g, W.time, u, "velocity", W.trusted, set(W.flags))


def slope_probe(W: GridProfile, fraction: float = 0.25) -> tuple[float, float]:
    """Least-squares slopes of W on the leftmost and rightmost parts of its trusted range.

    Forcing moves W by a bounded amount over a finite horizon, so the error of
    a probe over a stretch of length L decays like 1/L: probing asymptotic
    slopes needs wide grids.
    """
    lo, hi = W.trusted
    m = hi - lo
    if m < 4:
        return (math.nan, math.nan)
    k = max(2, int(round(fraction * m)))
    x = W.grid.x
    left = np.polyfit(x[lo:lo + k], W.values[lo:lo + k], 1)[0]
    right = np.polyfit(x[hi - k:hi], W.values[hi - k:hi], 1)[0]
    return (float(left), float(right))
