"""Busemann functions along pairing times, and the global solutions and shocks built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .action import ActionParams, Path
from .environment import Environment
from .hopf_lax import (EvolveParams, GridProfile, GridSpec, evolve, evolve_one, velocity_from)
from .minimizers import (BackwardSolver, DomainPolicy, MinimizerTrace, abs_width, path_is_trusted,
                         refine as refine_path, trace_many)

_P1 = ActionParams(1.0)


@dataclass
class BusemannEstimate:
    p1: tuple
    p2: tuple
    v: float
    value: float
    pairing_ks_used: list
    residual_series: list
    reliable: bool = True
    flags: set = field(default_factory=set)


def _tail_actions(env: Environment, path: Path) -> np.ndarray:
    """S[t - start] = action of path restricted to [t, end] with p = 1."""
    x = path.positions
    F = env.evaluate(path.times, x)[0]
    cost = 0.5 * np.diff(x) ** 2 + F[:-1]
    S = np.zeros(len(x))
    S[:-1] = np.cumsum(cost[::-1])[::-1]
    return S


def busemann_rows(env: Environment, anchor: Path, X: np.ndarray, start: int, c: float = 1.0,
                  v: float | None = None):
    """Vectorized Busemann values B(anchor end, row end) for many paths with a common start.

    Returns (values, reliable) arrays; same rule as ``busemann_from_paths``.
    """
    K, L = X.shape
    T = start + np.arange(L)
    F = env.evaluate(np.broadcast_to(T, X.shape), X)[0]
    cost = 0.5 * np.diff(X, axis=1) ** 2 + F[:, :-1]
    S = np.zeros((K, L))
    S[:, :-1] = np.cumsum(cost[:, ::-1], axis=1)[:, ::-1]
    S_a = _tail_actions(env, anchor)
    n_row = start + L - 1
    n = min(n_row, anchor.end_time)
    t0 = max(start, anchor.start_time)
    a = anchor.positions[t0 - anchor.start_time:n - anchor.start_time + 1]
    b = X[:, t0 - start:n - start + 1]
    gap = np.abs(b - a[None, :])
    if gap.shape[1] < 4:
        raise ValueError("paths are too short to pair")
    Wk = gap[:, 2:] + gap[:, 1:-1] + gap[:, :-2]
    ks = t0 + 2 + np.arange(Wk.shape[1])
    keep = ks < n
    ks, Wk = ks[keep], Wk[:, keep]
    ok = Wk < (c / (n - ks))[None, :]
    reliable = ok.any(axis=1)
    first = np.where(reliable, np.argmax(ok, axis=1), np.argmin(Wk * (n - ks)[None, :], axis=1))
    k = ks[first]
    vals = S[np.arange(K), k - 1 - start] - S_a[k - 1 - anchor.start_time]
    if v is not None and anchor.start_time == start and not reliable.all():
        full = S[:, 0] + v * X[:, 0] - (S_a[0] + v * anchor.positions[0])
        vals = np.where(reliable, vals, full)
    return vals, reliable


def busemann_from_paths(env: Environment, g1: Path, g2: Path, c: float = 1.0,
                        S1: np.ndarray | None = None, S2: np.ndarray | None = None,
                        v: float | None = None):
    """Delta_k = A^{k-1,n2}(g2) - A^{k-1,n1}(g1) at pairing times, deepest last.

    Returns (value, ks, series, reliable). Without a pairing time the value is
    the whole finite-horizon difference, including the initial term v*y, when
    ``v`` is given and both paths start together; this is what the pairing
    value equals once the paths coalesce, and it telescopes exactly.
    """
    n = min(g1.end_time, g2.end_time)
    ks, W = abs_width(g1, g2, n)
    keep = ks < n
    ks, W = ks[keep], W[keep]
    reliable = True
    sel = W < c / (n - ks)
    if sel.any():
        used = ks[sel][::-1]
    elif len(ks):
        used = np.array([ks[int(np.argmin(W * (n - ks)))]])
        reliable = False
    else:
        raise ValueError("paths are too short to pair")
    S1 = _tail_actions(env, g1) if S1 is None else S1
    S2 = _tail_actions(env, g2) if S2 is None else S2
    series = [float(S2[k - 1 - g2.start_time] - S1[k - 1 - g1.start_time]) for k in used]
    if not reliable and v is not None and g1.start_time == g2.start_time:
        full = float(S2[0] + v * g2.positions[0] - S1[0] - v * g1.positions[0])
        return full, [], [full], False
    return series[-1], [int(k) for k in used], series, reliable


class BusemannSolver:
    """Backward minimizers of slope v for several endpoints from one DP run.

    With ``refine``, the trace to a point P also competes against paths that
    follow the minimizer of an earlier point Q and then the optimal Q -> P
    segment. The grid DP can miss wells narrower than h; these candidates
    repair the cases where another endpoint's trace found the better basin.
    """

    def __init__(self, env: Environment, v: float, points, horizon: int,
                 policy: DomainPolicy | None = None, refine: bool = True):
        self.env = env
        self.v = float(v)
        pts = [(int(n), float(x)) for n, x in points]
        self.points = sorted(set(pts))
        n_lo = min(n for n, _ in pts)
        n_hi = max(n for n, _ in pts)
        self.m = n_lo - int(horizon)
        xs = [x for _, x in pts]
        center = 0.5 * (min(xs) + max(xs)) - self.v * (n_hi - self.m) / 2.0
        policy = policy or DomainPolicy()
        span = 0.5 * (max(xs) - min(xs))
        self.policy = policy
        policy = DomainPolicy(policy.h, policy.r_width, policy.margin + span)
        self.solver = BackwardSolver(env, self.v, self.m, n_hi, center, policy, _P1, "linear")
        self.refine = refine
        self._traces: dict = {}

    def _via(self, q, key) -> MinimizerTrace | None:
        from .shape import solve_point_to_point
        tq = self.trace(q)
        if not tq.refined:
            return None
        seg = solve_point_to_point(self.env, q, key, _P1, self.policy)
        pos = np.concatenate([tq.path.positions, seg.trace.path.positions[1:]])
        tr = refine_path(self.env, Path(tq.path.start_time, pos), _P1, start_slope=self.v,
                         source="linear_initial_v")
        tr.flags |= tq.flags | (seg.flags - {"no_convergence"})
        return tr

    def trace(self, point) -> MinimizerTrace:
        key = (int(point[0]), float(point[1]))
        if key not in self._traces:
            best = self.solver.trace(key[0], key[1], self.refine)
            if self.refine:
                for q in self.points:
                    if q[0] >= key[0]:
                        continue
                    alt = self._via(q, key)
                    if alt is not None and alt.refined and (not best.refined or alt.action < best.action):
                        best = alt
            self._traces[key] = best
        return self._traces[key]

    def estimate(self, p1, p2, c: float = 1.0) -> BusemannEstimate:
        t1, t2 = self.trace(p1), self.trace(p2)
        val, ks, series, ok = busemann_from_paths(self.env, t1.path, t2.path, c, v=self.v)
        flags = set(t1.flags) | set(t2.flags)
        if not ok:
            flags.add("no_pairing")
        return BusemannEstimate(tuple(p1), tuple(p2), self.v, val, ks, series, ok, flags)


def busemann_estimate(env: Environment, p1, p2, v: float, horizon=256, c: float = 1.0,
                      policy: DomainPolicy | None = None, refine: bool = True) -> BusemannEstimate:
    """B(p1, p2) for slope v. ``horizon`` may be a schedule of increasing
    horizons; later entries are tried only while no pairing time is found."""
    schedule = [int(horizon)] if np.ndim(horizon) == 0 else [int(h) for h in horizon]
    if not schedule:
        raise ValueError("empty horizon schedule")
    for hz in schedule:
        est = BusemannSolver(env, v, [p1, p2], hz, policy, refine).estimate(p1, p2, c)
        if est.reliable:
            break
    return est


# ---------------------------------------------------------------------------
# global potential and velocity

@dataclass(frozen=True)
class Window:
    x_lo: float
    x_hi: float
    h: float = 2.0**-6

    def grid(self) -> GridSpec:
        lo = math.floor(self.x_lo / self.h)
        hi = math.ceil(self.x_hi / self.h)
        return GridSpec(lo * self.h, self.h, hi - lo + 1)


def _potential_frames(env, v, ns, window, horizon, policy, c, refine):
    """Potentials at times ns (all sharing one start time) from a single DP run."""
    wg = window.grid()
    pol = policy or DomainPolicy(h=window.h)
    span = 0.5 * (wg.x_max - wg.x_min)
    pol = DomainPolicy(pol.h, pol.r_width, pol.margin + span)
    m = min(min(ns), 0) - horizon
    top = max(max(ns), 0)
    center = 0.5 * (wg.x_min + wg.x_max) - v * (top - m) / 2.0
    solver = BackwardSolver(env, v, m, top, center, pol, _P1, "linear")
    g = solver.grid
    idx_nodes = np.array([g.index_of(x) for x in wg.x])
    if refine:
        anchor = solver.trace(0, 0.0, True).path
        anchor_ok = "boundary_contact" not in solver.trace(0, 0.0, True).flags
    else:
        anchor_idx = trace_many(solver.stack, [g.index_of(0.0)], 0)[0]
        anchor = Path(m, g.x[anchor_idx])
        anchor_ok = path_is_trusted(solver.stack, anchor_idx)
    out = []
    for n in ns:
        flags = set() if anchor_ok else {"boundary_contact"}
        if refine:
            trs = [solver.trace(n, float(x), True) for x in wg.x]
            X = np.array([t.path.positions for t in trs])
            trusted = np.array(["boundary_contact" not in t.flags for t in trs])
        else:
            mat = trace_many(solver.stack, idx_nodes, n)
            X = g.x[mat]
            trusted = ~np.any((mat == 0) | (mat == g.count - 1), axis=1)
        vals, rel = busemann_rows(env, anchor, X, m, c, v)
        if not rel.all():
            flags.add("no_pairing")
        if trusted.all():
            lo, hi = 0, len(trusted)
        elif trusted.any():
            lo = int(np.argmax(trusted))
            hi = len(trusted) - int(np.argmax(trusted[::-1]))
        else:
            lo = hi = 0
        prof = GridProfile(wg, n, vals, "potential", (lo, hi), flags)
        if n > m:
            # one-step preimages from the unrestricted run, used to validate window steps
            prof.meta["preimage"] = g.x[solver.stack.step_map(n)[idx_nodes]]
        out.append(prof)
    return out


def global_potential(env: Environment, v: float, times, window: Window, horizon: int = 256,
                     policy: DomainPolicy | None = None, c: float = 1.0, refine: bool = False):
    """U(n, x) = B((0,0), (n,x)) on the window for each time.

    All times share one DP run started at min(times, 0) - horizon, so every
    frame sees at least ``horizon`` steps and consecutive frames are exactly
    related by the Hopf-Lax step wherever the estimates fall back to the
    finite-horizon difference.
    """
    times = [int(n) for n in times]
    return _potential_frames(env, float(v), times, window, int(horizon), policy, c, refine)


def fixed_point_deviation(env: Environment, U_n: GridProfile, U_n1: GridProfile) -> dict:
    """Constant-aligned max deviation between evolve_one(U_n) and U_{n+1}.

    A node is compared only when its preimage in the unrestricted run lies
    strictly inside the window; the windowed minimum is then exact there.
    """
    stepped, _ = evolve_one(env, U_n, EvolveParams(p=1.0))
    ok = U_n1.trusted_mask() & U_n.trusted_mask()
    pre = U_n1.meta.get("preimage")
    if pre is not None:
        g = U_n.grid
        ok &= (pre > g.x_min + 0.5 * g.h) & (pre < g.x_max - 0.5 * g.h)
    else:
        ok &= stepped.trusted_mask()
    if not ok.any():
        return {"max_dev": math.nan, "nodes": 0}
    d = stepped.values[ok] - U_n1.values[ok]
    d = d - np.median(d)
    return {"max_dev": float(np.max(np.abs(d))), "nodes": int(ok.sum())}


def global_velocity(env: Environment, v: float, n: int, window: Window, horizon: int = 256,
                    policy: DomainPolicy | None = None) -> GridProfile:
    """u_v(n, x) = x - (position at n-1 of the backward minimizer from (n, x)), on the window."""
    wg = window.grid()
    pol = policy or DomainPolicy(h=window.h)
    span = 0.5 * (wg.x_max - wg.x_min)
    pol = DomainPolicy(pol.h, pol.r_width, pol.margin + span)
    m = int(n) - int(horizon)
    center = 0.5 * (wg.x_min + wg.x_max) - v * horizon / 2.0
    solver = BackwardSolver(env, float(v), m, int(n), center, pol, _P1, "linear")
    g = solver.grid
    vel = velocity_from(solver.final, solver.stack.maps[-1])
    i0 = g.index_of(wg.x_min)
    sl = slice(i0, i0 + wg.count)
    lo, hi = vel.trusted
    tlo = min(max(lo - i0, 0), wg.count)
    thi = max(min(hi - i0, wg.count), tlo)
    flags = set() if (tlo == 0 and thi == wg.count) else {"boundary_contact"}
    return GridProfile(wg, int(n), vel.values[sl].copy(), "velocity", (tlo, thi), flags)


# ---------------------------------------------------------------------------
# shocks

@dataclass
class ShockRecord:
    time: int
    x: float
    index: int
    u_left: float
    u_right: float
    id: int = -1
    successor: int | None = None
    weak: bool = False
    exited: bool = False


def detect_shocks(velocity: GridProfile, jump_tol: float | None = None) -> list[ShockRecord]:
    """Jumps of the monotone map M = x - u larger than jump_tol (default 4h)."""
    g = velocity.grid
    tol = 4.0 * g.h if jump_tol is None else float(jump_tol)
    M = g.x - velocity.values
    dM = np.diff(M)
    lo, hi = velocity.trusted
    out = []
    for i in np.nonzero(dM > tol)[0]:
        if lo <= i and i + 1 < hi:
            out.append(ShockRecord(velocity.time, float(g.x[i + 1]), int(i + 1),
                                   float(velocity.values[i]), float(velocity.values[i + 1])))
    return out


@dataclass
class ShockForest:
    records: list
    merges: int
    times: list

    def to_json(self) -> dict:
        return {
            "times": [int(t) for t in self.times],
            "merges": int(self.merges),
            "nodes": [{"id": r.id, "time": r.time, "x": r.x, "u_left": r.u_left, "u_right": r.u_right,
                       "successor": r.successor, "weak": r.weak, "exited": r.exited}
                      for r in self.records],
        }


def shock_genealogy(env: Environment, v: float, window: Window, times, horizon: int = 64,
                    initial: GridProfile | None = None, policy: DomainPolicy | None = None,
                    jump_tol: float | None = None, link_radius: int = 2) -> ShockForest:
    """Shocks on consecutive times with one successor link each and merge counts.

    The successor of a shock between nodes j-1 and j at time t is placed where
    the backpointer map into t+1 crosses j.
    """
    times = [int(t) for t in times]
    if any(b != a + 1 for a, b in zip(times, times[1:])):
        raise ValueError("times must be consecutive")
    if initial is not None:
        if initial.time != times[0]:
            raise ValueError("initial profile must sit at the first time")
        W0 = initial
        detect_from = 1
    else:
        wg = window.grid()
        pol = policy or DomainPolicy(h=window.h)
        span = 0.5 * (wg.x_max - wg.x_min)
        pol = DomainPolicy(pol.h, pol.r_width, pol.margin + span)
        m = times[0] - int(horizon)
        center = 0.5 * (wg.x_min + wg.x_max) - v * (times[-1] - m) / 2.0
        from .hopf_lax import linear_profile
        W0 = linear_profile(pol.grid(center, times[-1] - m), m, v)
        detect_from = 0
    final, stack, profiles = evolve(env, W0, times[-1], EvolveParams(p=1.0), keep_profiles=True)
    g = W0.grid
    wg = window.grid()
    i_lo = int(math.ceil((wg.x_min - g.x_min) / g.h - 1e-9))
    i_hi = int(math.floor((wg.x_max - g.x_min) / g.h + 1e-9))
    frames: dict[int, list[ShockRecord]] = {}
    records: list[ShockRecord] = []
    for t in times[detect_from:]:
        if t == W0.time:
            continue
        prof = profiles[t - W0.time]
        vel = velocity_from(prof, stack.step_map(t))
        recs = [r for r in detect_shocks(vel, jump_tol) if i_lo <= r.index <= i_hi]
        for r in recs:
            r.id = len(records)
            records.append(r)
        frames[t] = recs
    ts = sorted(frames)
    for t in ts[:-1]:
        bp = stack.step_map(t + 1)
        nxt = frames[t + 1]
        by_index = {r.index: r for r in nxt}
        for r in frames[t]:
            i_star = int(np.searchsorted(bp, r.index, side="left"))
            if i_star <= 0 or i_star >= g.count or not (i_lo <= i_star <= i_hi):
                r.exited = True
                continue
            target = by_index.get(i_star)
            if target is None:
                near = [s for s in nxt if abs(s.index - i_star) <= link_radius]
                if near:
                    target = min(near, key=lambda s: (abs(s.index - i_star), s.index))
            if target is None:
                u = velocity_from(profiles[t + 1 - W0.time], bp)
                target = ShockRecord(t + 1, float(g.x[i_star]), i_star,
                                     float(u.values[i_star - 1]), float(u.values[i_star]),
                                     id=len(records), weak=True)
                records.append(target)
                nxt.append(target)
                by_index[i_star] = target
            r.successor = target.id
    indeg: dict[int, int] = {}
    for r in records:
        if r.successor is not None:
            indeg[r.successor] = indeg.get(r.successor, 0) + 1
    merges = sum(d - 1 for d in indeg.values() if d > 1)
    return ShockForest(records, merges, ts)
