"""Basins of attraction and pullback runs, measured in a metric on monotone-map profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .environment import Environment, EnvironmentConfig
from .hopf_lax import EvolveParams, GridProfile, GridSpec, evolve, velocity_from
from .minimizers import DomainPolicy, path_is_trusted, trace_indices
from .parallel import ordered_map


class NotMonotone(ValueError):
    pass


# ---------------------------------------------------------------------------
# initial data

@dataclass(frozen=True)
class SlopeData:
    """Asymptotic slope bounds of W(x)/x at -inf and +inf.

    When the limit exists, both bounds on that side are equal to it.
    """

    left_liminf: float
    left_limsup: float
    right_liminf: float
    right_limsup: float

    @classmethod
    def limits(cls, v_minus: float, v_plus: float) -> "SlopeData":
        return cls(v_minus, v_minus, v_plus, v_plus)

    @property
    def left_limit(self) -> float | None:
        return self.left_liminf if self.left_liminf == self.left_limsup else None

    @property
    def right_limit(self) -> float | None:
        return self.right_liminf if self.right_liminf == self.right_limsup else None


@dataclass(frozen=True)
class InitialDataSpec:
    """Analytic initial potential W.

    forms: ``zero``; ``linear`` (v); ``piecewise_linear`` (breaks, slopes, W(0)=0);
    ``bounded_perturbation`` (v, amplitude, period): v x + a sin(2 pi x / period).
    ``slopes`` overrides the slope data implied by the form.
    """

    form: str = "zero"
    params: dict = field(default_factory=dict)
    slopes: SlopeData | None = None

    def __post_init__(self):
        if self.form not in ("zero", "linear", "piecewise_linear", "bounded_perturbation"):
            raise ValueError(f"unknown initial data form {self.form!r}")
        if self.form == "piecewise_linear":
            b = list(self.params.get("breaks", []))
            s = list(self.params.get("slopes", []))
            if len(s) != len(b) + 1 or sorted(b) != b:
                raise ValueError("piecewise_linear needs sorted breaks and len(slopes) = len(breaks) + 1")

    def slope_data(self) -> SlopeData:
        if self.slopes is not None:
            return self.slopes
        p = self.params
        if self.form == "zero":
            return SlopeData.limits(0.0, 0.0)
        if self.form in ("linear", "bounded_perturbation"):
            v = float(p.get("v", 0.0))
            return SlopeData.limits(v, v)
        s = [float(x) for x in p["slopes"]]
        return SlopeData.limits(s[0], s[-1])

    def potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.form == "zero":
            return np.zeros_like(x)
        if self.form == "linear":
            return float(p.get("v", 0.0)) * x
        if self.form == "bounded_perturbation":
            v = float(p.get("v", 0.0))
            a = float(p.get("amplitude", 1.0))
            T = float(p.get("period", 1.0))
            return v * x + a * np.sin(2.0 * math.pi * x / T)
        # W(x) = integral from 0 to x of the piecewise-constant slope
        edges = np.concatenate([[-np.inf], [float(b) for b in p["breaks"]], [np.inf]])
        out = np.zeros_like(x)
        for k, sk in enumerate(float(v) for v in p["slopes"]):
            lo, hi = edges[k], edges[k + 1]
            out += sk * (np.clip(x, lo, hi) - min(max(0.0, lo), hi))
        return out

    def profile(self, grid: GridSpec, time: int) -> GridProfile:
        return GridProfile(grid, time, self.potential(grid.x), "potential")


@dataclass(frozen=True)
class Classification:
    kind: str
    v: float | None


def classify_initial(spec: InitialDataSpec | SlopeData) -> Classification:
    """Which global solution attracts the data, from its asymptotic slopes.

    fan_v0: liminf_{+inf} W/x >= 0 and limsup_{-inf} W/x <= 0.
    left_wins(v): v > 0, lim_{-inf} W/x = v, liminf_{+inf} W/x > -v.
    right_wins(v): v < 0, lim_{+inf} W/x = v, limsup_{-inf} W/x < -v.
    Anything else, including the boundary cases, is unclassified.
    """
    s = spec.slope_data() if isinstance(spec, InitialDataSpec) else spec
    if s.right_liminf >= 0.0 and s.left_limsup <= 0.0:
        return Classification("fan_v0", 0.0)
    vl = s.left_limit
    if vl is not None and vl > 0.0 and s.right_liminf > -vl:
        return Classification("left_wins", vl)
    vr = s.right_limit
    if vr is not None and vr < 0.0 and s.left_limsup < -vr:
        return Classification("right_wins", vr)
    return Classification("unclassified", None)


# ---------------------------------------------------------------------------
# metric

def monotone_map(u: GridProfile) -> np.ndarray:
    M = u.grid.x - u.values
    if np.any(np.diff(M) < -1e-12):
        raise NotMonotone("not in G: x - u(x) decreases")
    return np.maximum.accumulate(M)


def _inv_left(M, x, h, y):
    """inf{x: M(x) >= y} for piecewise-linear M, unit-slope extension outside the grid."""
    j = np.searchsorted(M, y, side="left")
    out = np.empty_like(y)
    lo = j == 0
    hi = j >= len(M)
    mid = ~(lo | hi)
    out[lo] = x[0] - (M[0] - y[lo])
    out[hi] = x[-1] + (y[hi] - M[-1])
    jm = j[mid]
    a, b = M[jm - 1], M[jm]
    out[mid] = x[jm - 1] + (y[mid] - a) / (b - a) * h
    return out


def _inv_right(M, x, h, y):
    """sup{x: M(x) <= y}, the right limit of the generalized inverse."""
    j = np.searchsorted(M, y, side="right") - 1
    out = np.empty_like(y)
    lo = j < 0
    hi = j >= len(M) - 1
    mid = ~(lo | hi)
    out[lo] = x[0] - (M[0] - y[lo])
    out[hi] = x[-1] + (y[hi] - M[-1])
    jm = j[mid]
    a, b = M[jm], M[jm + 1]
    out[mid] = x[jm] + (y[mid] - a) / (b - a) * h
    return out


def sup_inverse_gap(u: GridProfile, w: GridProfile, N: float) -> float:
    """sup over y in [-N, N] of |M_u^{-1}(y) - M_w^{-1}(y)|, exact for piecewise-linear maps."""
    Mu, Mw = monotone_map(u), monotone_map(w)
    ys = np.concatenate([Mu, Mw, [-N, N]])
    ys = np.unique(ys[(ys >= -N) & (ys <= N)])
    xu, xw = u.grid.x, w.grid.x
    left = np.abs(_inv_left(Mu, xu, u.grid.h, ys) - _inv_left(Mw, xw, w.grid.h, ys))
    yr = ys[ys < N]
    right = np.abs(_inv_right(Mu, xu, u.grid.h, yr) - _inv_right(Mw, xw, w.grid.h, yr))
    return float(max(left.max(initial=0.0), right.max(initial=0.0)))


def metric_d(u: GridProfile, w: GridProfile, N_max: int = 16) -> float:
    """sum_{N=1}^{N_max} 2^{-N} min(1, sup_{[-N,N]} |M_u^{-1} - M_w^{-1}|); truncation error <= 2^{-N_max}."""
    total = 0.0
    for N in range(1, int(N_max) + 1):
        total += 2.0**-N * min(1.0, sup_inverse_gap(u, w, float(N)))
    return total


# ---------------------------------------------------------------------------
# pullback

@dataclass
class PullbackRow:
    seed: int
    m: int
    d: float
    preimage_slope: float
    boundary_flag: bool


@dataclass(frozen=True)
class _PullbackJob:
    env_config: EnvironmentConfig
    seed: int
    spec: InitialDataSpec
    v: float
    ms: tuple
    n_obs: int
    window: tuple
    ref_horizon: int
    policy: DomainPolicy
    N_max: int


def _window_slice(grid: GridSpec, wgrid: GridSpec) -> slice:
    i0 = grid.index_of(wgrid.x_min)
    return slice(i0, i0 + wgrid.count)


def _window_grid(lo: float, hi: float, h: float) -> GridSpec:
    a = math.floor(lo / h)
    b = math.ceil(hi / h)
    return GridSpec(a * h, h, b - a + 1)


def _pullback_one(job: _PullbackJob) -> list[PullbackRow]:
    env = Environment(replace(job.env_config, master_seed=int(job.seed)))
    pol = job.policy
    wgrid = _window_grid(job.window[0], job.window[1], pol.h)
    half = 0.5 * (wgrid.x_max - wgrid.x_min)
    mid = 0.5 * (wgrid.x_max + wgrid.x_min)
    wide = DomainPolicy(pol.h, pol.r_width, pol.margin + half)

    def run(W0_fn, m, keep):
        H = job.n_obs - m
        grid = wide.grid(mid - job.v * H / 2.0, H)
        W0 = W0_fn(grid, m)
        final, stack = evolve(env, W0, job.n_obs, EvolveParams(p=1.0), keep_maps=keep)
        vel = velocity_from(final, stack.maps[-1])
        sl = _window_slice(grid, wgrid)
        lo, hi = vel.trusted
        flag = not (lo <= sl.start and sl.stop <= hi)
        prof = GridProfile(wgrid, job.n_obs, vel.values[sl].copy(), "velocity")
        return prof, stack, grid, flag

    ref, _, _, ref_flag = run(lambda g, m: GridProfile(g, m, job.v * g.x), job.n_obs - job.ref_horizon, "last")
    rows = []
    for m in job.ms:
        prof, stack, grid, flag = run(job.spec.profile, m, "all")
        idx = trace_indices(stack, grid.index_of(0.0))
        y_star = float(grid.x[idx[0]])
        flag = flag or ref_flag or not path_is_trusted(stack, idx)
        rows.append(PullbackRow(int(job.seed), int(m), metric_d(prof, ref, job.N_max),
                                y_star / (m - job.n_obs), bool(flag)))
    return rows


def pullback_experiment(env_config: EnvironmentConfig, spec: InitialDataSpec, v: float | None, ms,
                        seeds, n_obs: int = 0, window=(-24.0, 24.0), ref_horizon: int = 512,
                        policy: DomainPolicy | None = None, N_max: int = 16,
                        workers: int = 1) -> list[PullbackRow]:
    """d(Psi^{m,n} w, u_v(n,.)) for each start time m and seed.

    The reference u_v(n,.) is the one-sided approximant with horizon
    ``ref_horizon``; v defaults to the classification of ``spec``.
    """
    if v is None:
        cls = classify_initial(spec)
        if cls.v is None:
            raise ValueError("initial data is unclassified; give v explicitly")
        v = cls.v
    policy = policy or DomainPolicy()
    jobs = [_PullbackJob(env_config, int(s), spec, float(v), tuple(int(m) for m in ms), int(n_obs),
                         tuple(window), int(ref_horizon), policy, int(N_max)) for s in seeds]
    out = []
    for rows in ordered_map(_pullback_one, jobs, workers):
        out.extend(rows)
    return out


def summarize_pullback(rows: list[PullbackRow]) -> dict:
    ms = sorted({r.m for r in rows}, reverse=True)
    med = {m: float(np.median([r.d for r in rows if r.m == m])) for m in ms}
    slope = {m: float(np.median([r.preimage_slope for r in rows if r.m == m])) for m in ms}
    flagged = sum(r.boundary_flag for r in rows)
    return {"ms": ms, "median_d": med, "median_preimage_slope": slope, "flagged": flagged}


# ---------------------------------------------------------------------------
# convergence in d versus pointwise convergence

@dataclass
class EquivalenceReport:
    d: list
    pointwise: list
    d_converges: bool
    pointwise_converges: bool

    @property
    def consistent(self) -> bool:
        return self.d_converges == self.pointwise_converges


def continuity_nodes(u: GridProfile, jump_tol: float | None = None) -> np.ndarray:
    """Nodes away from jumps of u (neither endpoint of a jump segment)."""
    tol = 4.0 * u.grid.h if jump_tol is None else jump_tol
    jumps = np.abs(np.diff(u.values)) > tol
    bad = np.zeros(u.grid.count, dtype=bool)
    bad[:-1] |= jumps
    bad[1:] |= jumps
    return ~bad


def convergence_equivalence_check(sequence, limit: GridProfile, N_max: int = 16,
                                  ratio: float = 0.125, floor: float = 1e-12) -> EquivalenceReport:
    """d(u_k, u) and max pointwise error at continuity nodes of u along the sequence.

    A series counts as converging when its last value is at most ``ratio``
    times its largest value (or below ``floor``).
    """
    mask = continuity_nodes(limit)
    ds, pw = [], []
    for u in sequence:
        ds.append(metric_d(u, limit, N_max))
        pw.append(float(np.max(np.abs(u.values[mask] - limit.values[mask]))))

    def conv(s):
        return s[-1] <= floor or s[-1] <= ratio * max(s)
    return EquivalenceReport(ds, pw, conv(ds), conv(pw))


# ---------------------------------------------------------------------------
# sample profiles

def random_profile(rng: np.random.Generator, grid: GridSpec, jumps: int = 4, time: int = 0) -> GridProfile:
    """Random element of G on ``grid``: M = x - u nondecreasing with a few jumps."""
    inc = rng.uniform(0.0, 2.0, grid.count - 1) * grid.h
    at = rng.choice(grid.count - 1, size=min(jumps, grid.count - 1), replace=False)
    inc[at] += rng.uniform(0.0, 1.5, len(at))
    M = np.concatenate([[rng.uniform(-1.0, 1.0) + grid.x_min], grid.x_min + np.cumsum(inc)])
    M[1:] += M[0] - grid.x_min
    return GridProfile(grid, time, grid.x - M, "velocity")


def equivalence_families(grid: GridSpec, length: int = 8) -> dict:
    """Two hand-built sequences in G with known behaviour.

    ``converging_steps``: a shock from +1 to -1 at s_k = h 2^(length-k) moving to 0;
    converges in d and pointwise away from the limiting shock.
    ``oscillating_heights``: constant +-1/2 alternating; converges in neither.
    Returns {name: (sequence, limit, expected_convergence)}.
    """
    x = grid.x

    def step(s):
        return GridProfile(grid, 0, np.where(x < s, 1.0, -1.0), "velocity")

    steps = [step(grid.h * 2.0 ** (length - k)) for k in range(1, length + 1)]
    osc = [GridProfile(grid, 0, np.full(grid.count, 0.5 * (-1) ** k), "velocity") for k in range(length)]
    return {
        "converging_steps": (steps, step(0.0), True),
        "oscillating_heights": (osc, GridProfile(grid, 0, np.zeros(grid.count), "velocity"), False),
    }
