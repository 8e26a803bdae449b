"""Grid minimizers with their Euler-Lagrange refinement and path diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from .action import ActionParams, Path
from .environment import Environment
from .hopf_lax import (BackpointerStack, EvolveParams, GridProfile, GridSpec, evolve,
                       linear_profile, point_profile)

EL_TOL = 1e-8


@dataclass(frozen=True)
class DomainPolicy:
    """Grid sizing: spacing h and half-width r_width*horizon + margin."""

    h: float = 2.0**-6
    r_width: float = 4.0
    margin: float = 8.0

    def grid(self, center: float, horizon: int, anchor: float = 0.0) -> GridSpec:
        hw = self.r_width * max(int(horizon), 1) + self.margin
        lo = math.floor((center - hw - anchor) / self.h)
        hi = math.ceil((center + hw - anchor) / self.h)
        return GridSpec(anchor + lo * self.h, self.h, hi - lo + 1)


@dataclass
class MinimizerTrace:
    path: Path
    refined: bool
    el_res: float
    source: str
    flags: set = field(default_factory=set)
    action: float = math.nan
    iterations: int = 0


@dataclass(frozen=True)
class ConeSpec:
    """Cone around the ray from the origin through (apex_time, apex_x).

    Half-width is ``eta`` or ``Q * k**(-delta)`` at time k.
    """

    apex_time: int
    apex_x: float
    eta: float | None = None
    Q: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.eta is None:
            if self.Q is None or self.delta is None:
                raise ValueError("give eta or both Q and delta")
            if not (self.Q > 0 and 0 < self.delta < 0.25):
                raise ValueError("need Q > 0 and 0 < delta < 1/4")
        elif not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.apex_time == 0:
            raise ValueError("apex time must be nonzero")

    def width(self, k):
        k = np.abs(np.asarray(k, dtype=np.float64))
        if self.eta is not None:
            return np.full(k.shape, float(self.eta))
        return self.Q * k ** (-self.delta)


# ---------------------------------------------------------------------------
# tracing

def trace_indices(stack: BackpointerStack, x_index: int, time: int | None = None) -> np.ndarray:
    time = stack.end_time if time is None else int(time)
    if not stack.start_time <= time <= stack.end_time:
        raise ValueError("time outside the stack")
    L = time - stack.start_time + 1
    idx = np.empty(L, dtype=np.int64)
    idx[-1] = int(x_index)
    for k in range(L - 1, 0, -1):
        idx[k - 1] = stack.maps[k - 1][idx[k]]
    return idx


def trace_back(stack: BackpointerStack, x_index: int, time: int | None = None) -> Path:
    """Grid-optimal path ending at node x_index at ``time`` (default: last time)."""
    idx = trace_indices(stack, x_index, time)
    return Path(stack.start_time, stack.grid.x[idx])


def path_is_trusted(stack: BackpointerStack, idx: np.ndarray) -> bool:
    """A grid path ending at time start+len-1 is trusted when its end node is.

    Trusted ranges are closed under backpointers, so the whole path then stays
    inside trusted ranges and off the edge nodes.
    """
    if np.any(idx == 0) or np.any(idx == stack.grid.count - 1):
        return False
    lo, hi = stack.trusted_at(stack.start_time + len(idx) - 1)
    return bool(lo <= idx[-1] < hi)


# ---------------------------------------------------------------------------
# refinement

def _eval_action(env, t, x, p, slope):
    """Action (without the constant W at a fixed start), gradient, Hessian diagonal."""
    F, f, f2 = env.evaluate(t, x, order=2)
    d = np.diff(x)
    A = 0.5 * float(np.sum(d * d))
    w = np.ones(len(x))
    w[0] = p
    w[-1] = 1.0 - p
    A += float(np.sum(w * F))
    g = np.zeros(len(x))
    g[:-1] -= d
    g[1:] += d
    g += w * f
    H = np.full(len(x), 2.0) + w * f2
    H[0] -= 1.0
    H[-1] -= 1.0
    if slope is not None:
        A += slope * x[0]
        g[0] += slope
    return A, g, H


def refine(env: Environment, path: Path, params: ActionParams | None = None, *,
           tol: float = EL_TOL, max_iter: int = 100, start_slope: float | None = None,
           source: str = "point_to_point") -> MinimizerTrace:
    """Damped Newton descent on the action with the last point fixed.

    The first point is fixed too unless ``start_slope`` is given, in which case
    it is free under the linear initial potential ``start_slope * y``.
    """
    p = (params or ActionParams()).p
    x = np.array(path.positions, dtype=np.float64)
    t = path.times
    L = len(x)
    if L < 3 and start_slope is None:
        A, _, _ = _eval_action(env, t, x, p, None) if L >= 2 else (0.0, None, None)
        return MinimizerTrace(path, True, 0.0, source, set(), A, 0)
    lo = 0 if start_slope is not None else 1
    free = slice(lo, L - 1)
    A, g, H = _eval_action(env, t, x, p, start_slope)
    res = float(np.max(np.abs(g[1:-1]))) if L >= 3 else 0.0
    res_free = float(np.max(np.abs(g[free])))
    it = 0
    ok = res_free <= tol
    while not ok and it < max_iter:
        it += 1
        gf = g[free]
        diag = H[free].copy()
        m = len(diag)
        step = None
        mu = 0.0
        for _ in range(30):
            ab = np.zeros((2, m))
            ab[1] = diag + mu
            ab[0, 1:] = -1.0
            try:
                c = cholesky_banded(ab, lower=False)
                step = cho_solve_banded((c, False), -gf)
                break
            except LinAlgError:
                mu = max(2.0 * mu, 1e-3 + max(0.0, -float(diag.min())))
        if step is None:
            break
        s = 1.0
        accepted = False
        for _ in range(60):
            xn = x.copy()
            xn[free] += s * step
            An, gn, Hn = _eval_action(env, t, xn, p, start_slope)
            rn = float(np.max(np.abs(gn[free])))
            if An < A or (An <= A + 1e-13 * (1.0 + abs(A)) and rn < res_free):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        x, A, g, H = xn, An, gn, Hn
        res_free = rn
        res = float(np.max(np.abs(g[1:-1]))) if L >= 3 else 0.0
        ok = res_free <= tol
    flags = set() if ok else {"no_convergence"}
    return MinimizerTrace(Path(path.start_time, x), ok, res, source, flags, A, it)


# ---------------------------------------------------------------------------
# one-sided approximants

class BackwardSolver:
    """One DP run reused to trace many endpoints.

    ``mode='linear'`` starts from W(y) = v*y at time m; ``mode='point'`` pins
    the start at (m, start_x).

    With ``drift`` d the DP runs in the moving frame z = x - d*(t - n_end), i.e.
    on the environment sheared by -d, with the kinetic cross term folded into
    the initial data and the readouts. Node sets then follow lines of slope d,
    which makes the discrete problem commute with shears of matching slope.
    ``center`` is given in original coordinates at the middle time; in point
    mode ``center=None`` centers the frame grid on the start node.
    """

    def __init__(self, env: Environment, v: float, m: int, n_end: int, center: float | None,
                 policy: DomainPolicy | None = None, params: ActionParams | None = None,
                 mode: str = "linear", start_x: float | None = None, anchor: float = 0.0,
                 sampling: str = "node", drift: float = 0.0):
        self.env = env
        self.v = float(v)
        self.m = int(m)
        self.policy = policy or DomainPolicy()
        self.params = params or ActionParams()
        self.mode = mode
        self.drift = d = float(drift)
        self.t_ref = int(n_end)
        frame_env = env.shear(d * self.t_ref, -d) if d else env
        if center is not None:
            center = self.to_frame(0.5 * (m + n_end), float(center))
        if mode == "linear":
            self.grid = self.policy.grid(center, n_end - m, anchor)
            W0 = linear_profile(self.grid, m, self.v - d)
        elif mode == "point":
            self.start_z = self.to_frame(m, float(start_x))
            self.grid = self.policy.grid(self.start_z if center is None else center,
                                         n_end - m, anchor=self.start_z)
            W0 = point_profile(self.grid, m, self.start_z)
            self.start_index = self.grid.index_of(self.start_z)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        self.final, self.stack = evolve(frame_env, W0, int(n_end), EvolveParams(p=self.params.p, sampling=sampling))

    def to_frame(self, t, x):
        return x - self.drift * (t - self.t_ref) if self.drift else x

    def grid_path(self, n: int, x: float):
        i = self.grid.index_of(self.to_frame(n, x))
        idx = trace_indices(self.stack, i, n)
        flags = set()
        if not path_is_trusted(self.stack, idx):
            flags.add("boundary_contact")
        if self.mode == "point" and idx[0] != self.start_index:
            raise RuntimeError("optimum selected a penalized start node")
        pos = self.grid.x[idx]
        if self.drift:
            t = self.stack.start_time + np.arange(len(idx))
            pos = pos + self.drift * (t - self.t_ref)
        return Path(self.stack.start_time, pos), idx, flags

    def trace(self, n: int, x: float, refine_path: bool = True, **kw) -> MinimizerTrace:
        path, idx, flags = self.grid_path(n, x)
        source = "linear_initial_v" if self.mode == "linear" else "point_to_point"
        if not refine_path:
            return MinimizerTrace(path, False, math.nan, source, flags)
        pos = np.array(path.positions)
        pos[-1] = float(x)
        tr = refine(self.env, Path(path.start_time, pos), self.params,
                    start_slope=self.v if self.mode == "linear" else None, source=source, **kw)
        tr.flags |= flags
        return tr

    def grid_value(self, n: int, x: float) -> float:
        """Grid DP value at (n, x) for the final time only, in original coordinates."""
        if n != self.stack.end_time:
            raise ValueError("grid values are kept only for the final time")
        z = self.to_frame(n, x)
        val = float(self.final.values[self.grid.index_of(z)])
        d = self.drift
        if d:
            H = n - self.m
            val += d * self.grid.x[self.grid.index_of(z)] + H * d * d / 2.0
            val += self.v * d * (self.m - self.t_ref) if self.mode == "linear" else -d * self.start_z
        return val


def one_sided_approx(env: Environment, endpoint: tuple[int, float], v: float, m: int,
                     policy: DomainPolicy | None = None, params: ActionParams | None = None,
                     mode: str = "linear", refine_path: bool = True) -> MinimizerTrace:
    """Finite-horizon approximant of the backward minimizer of slope v through endpoint."""
    n, x = int(endpoint[0]), float(endpoint[1])
    if not m < n:
        raise ValueError("need m < n")
    center = x - v * (n - m) / 2.0
    if mode == "linear":
        solver = BackwardSolver(env, v, m, n, center, policy, params, "linear")
    else:
        solver = BackwardSolver(env, v, m, n, center, policy, params, "point",
                                start_x=x - v * (n - m))
    return solver.trace(n, x, refine_path)


# ---------------------------------------------------------------------------
# diagnostics

@dataclass
class CrossingReport:
    coincide: bool
    ordered: bool
    crossings: list
    max_gap: float


def _common(p1: Path, p2: Path):
    t0 = max(p1.start_time, p2.start_time)
    t1 = min(p1.end_time, p2.end_time)
    if t1 < t0:
        raise ValueError("paths share no times")
    a = p1.positions[t0 - p1.start_time:t1 - p1.start_time + 1]
    b = p2.positions[t0 - p2.start_time:t1 - p2.start_time + 1]
    return t0, a, b


def crossing_check(p1: Path, p2: Path, tol: float = 1e-9) -> CrossingReport:
    """Sign changes of p1 - p2 on the interior of the common time range."""
    t0, a, b = _common(p1, p2)
    d = a - b
    inner = d[1:-1] if len(d) > 2 else d[:0]
    sgn = np.where(inner > tol, 1, np.where(inner < -tol, -1, 0))
    crossings = []
    last = 0
    for k, s in enumerate(sgn):
        if s == 0:
            continue
        if last != 0 and s != last:
            crossings.append(t0 + 1 + k)
        last = s
    coincide = bool(np.all(np.abs(d) <= tol))
    return CrossingReport(coincide, not crossings, crossings, float(np.max(np.abs(d))))


def straightness_check(trace: MinimizerTrace | Path, cone: ConeSpec) -> dict:
    path = trace.path if isinstance(trace, MinimizerTrace) else trace
    t = path.times
    keep = t != 0
    t = t[keep]
    x = path.positions[keep]
    if len(t) == 0:
        return {"inside": True, "worst_violation": -math.inf}
    viol = np.abs(x / t - cone.apex_x / cone.apex_time) - cone.width(t)
    worst = float(np.max(viol))
    return {"inside": worst <= 0.0, "worst_violation": worst,
            "first_outside": int(t[np.argmax(viol > 0)]) if worst > 0 else None}


def width_Wk(p1: Path, p2: Path, n: int | None = None, tol: float = 1e-12):
    """Triple-gap series W_k = sum_{i=0..2} (p2 - p1)(k-i); returns (ks, W)."""
    t0, a, b = _common(p1, p2)
    gap = b - a
    if np.any(gap < -tol):
        raise ValueError("paths are not ordered (p1 <= p2)")
    gap = np.maximum(gap, 0.0)
    if len(gap) < 3:
        return np.empty(0, dtype=np.int64), np.empty(0)
    W = gap[2:] + gap[1:-1] + gap[:-2]
    ks = t0 + 2 + np.arange(len(W))
    if n is not None:
        keep = ks <= n
        ks, W = ks[keep], W[keep]
    return ks, W


def pairing_times(p1: Path, p2: Path, n: int, c: float = 1.0) -> list[int]:
    """All k with W_k < c/(n-k), in descending order (k = n always qualifies)."""
    ks, W = abs_width(p1, p2, n)
    with np.errstate(divide="ignore"):
        bound = np.where(ks < n, c / np.maximum(n - ks, 1), np.inf)
    return [int(k) for k in ks[W < bound][::-1]]


def abs_width(p1: Path, p2: Path, n: int | None = None):
    """W_k from absolute gaps; insensitive to which path lies above."""
    t0, a, b = _common(p1, p2)
    gap = np.abs(b - a)
    if len(gap) < 3:
        return np.empty(0, dtype=np.int64), np.empty(0)
    W = gap[2:] + gap[1:-1] + gap[:-2]
    ks = t0 + 2 + np.arange(len(W))
    if n is not None:
        keep = ks <= n
        ks, W = ks[keep], W[keep]
    return ks, W


def trace_many(stack: BackpointerStack, indices, time: int | None = None) -> np.ndarray:
    """Backtrack many end nodes at once; returns an index matrix (len(indices), L)."""
    time = stack.end_time if time is None else int(time)
    L = time - stack.start_time + 1
    cur = np.asarray(indices, dtype=np.int64)
    out = np.empty((len(cur), L), dtype=np.int64)
    out[:, -1] = cur
    for k in range(L - 1, 0, -1):
        cur = stack.maps[k - 1][cur].astype(np.int64)
        out[:, k - 1] = cur
    return out
