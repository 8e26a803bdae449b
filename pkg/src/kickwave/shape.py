"""Optimal point-to-point actions: shape function estimates, shear identity, tails."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .action import ActionParams, Path, kinetic_action, max_excursion, potential_action
from .environment import Environment, EnvironmentConfig
from .minimizers import BackwardSolver, DomainPolicy, MinimizerTrace
from .parallel import ordered_map


@dataclass
class PointSolution:
    value: float
    grid_value: float
    trace: MinimizerTrace
    flags: set = field(default_factory=set)


def _band_policies(policy: DomainPolicy, H: int):
    """Half-widths 2 H^(2/3), 4 H^(2/3), ... (+ margin), ending with the policy's own width."""
    full = policy.r_width * max(H, 1)
    c = 2.0 * max(H, 1) ** (2.0 / 3.0)
    while c < full:
        yield DomainPolicy(policy.h, c / max(H, 1), policy.margin)
        c *= 2.0
    yield policy


def solve_point_to_point(env: Environment, start: tuple[int, float], end: tuple[int, float],
                         params: ActionParams | None = None, policy: DomainPolicy | None = None,
                         refine: bool = True, extra_ends=(), robust: bool = True
                         ) -> PointSolution | list[PointSolution]:
    """Optimal action from (n0, x0) to (n1, x1) by grid DP and refinement.

    The DP grid moves with the chord from start to end and starts as a band
    of half-width 2 H^(2/3) around it, doubled until every requested endpoint
    is trusted (at most the policy's width). The lattice is pinned to the
    start, so a trusted endpoint gets the same result as on the widest grid.
    With ``refine`` and ``robust``, a second DP run with cell-minimum forcing
    supplies another candidate basin; the lower refined action is kept.
    ``extra_ends`` are further endpoints at times in (n0, n1] traced from the
    same DP run; when given, a list of solutions is returned, main one first.
    """
    n0, x0 = int(start[0]), float(start[1])
    n1, x1 = int(end[0]), float(end[1])
    if n1 <= n0:
        raise ValueError("end time must follow start time")
    params = params or ActionParams()
    policy = policy or DomainPolicy()
    ends = [(n1, x1), *extra_ends]
    # chord frame: a sheared problem maps to the same discrete problem
    drift = (x1 - x0) / (n1 - n0)
    for pol in _band_policies(policy, n1 - n0):
        solvers = [BackwardSolver(env, 0.0, n0, n1, None, pol, params, "point", start_x=x0, drift=drift)]
        if refine and robust:
            solvers.append(BackwardSolver(env, 0.0, n0, n1, None, pol, params, "point", start_x=x0,
                                          sampling="cellmin", drift=drift))
        if pol is policy:
            break
        try:
            if not any(sv.grid_path(n, x)[2] for sv in solvers for n, x in ends):
                break
        except RuntimeError:
            continue
    solver = solvers[0]
    alt = solvers[1] if len(solvers) > 1 else None
    out = []
    for (n, x) in ends:
        path, idx, flags = solver.grid_path(n, x)
        gval = _grid_action(solver, path)
        if refine:
            tr = solver.trace(n, x, True)
            if alt is not None:
                tr2 = alt.trace(n, x, True)
                if tr2.refined and (not tr.refined or tr2.action < tr.action):
                    tr = tr2
            val = tr.action
        else:
            tr = MinimizerTrace(path, False, math.nan, "point_to_point", flags)
            val = gval
        tr.flags |= flags
        out.append(PointSolution(float(val), float(gval), tr, set(tr.flags)))
    return out if extra_ends else out[0]


def _grid_action(solver: BackwardSolver, path: Path) -> float:
    if len(path) < 2:
        return 0.0
    return kinetic_action(path) + potential_action(solver.env, path, solver.params)


def point_action(env: Environment, n: int, v: float, params: ActionParams | None = None,
                 policy: DomainPolicy | None = None) -> float:
    """Refined optimal action A^{0,n}(0, v n)."""
    return solve_point_to_point(env, (0, 0.0), (n, v * n), params, policy).value


def shear_action_identity(env: Environment, n: int, x0: float, x1: float, a: float, w: float,
                          params: ActionParams | None = None, policy: DomainPolicy | None = None):
    """Both sides of A_{L env}(x0+a, x1+a+w n) = A_env(x0, x1) + (x1-x0) w + n w^2/2."""
    sheared = env.shear(a, w)
    lhs = solve_point_to_point(sheared, (0, x0 + a), (n, x1 + a + w * n), params, policy).value
    base = solve_point_to_point(env, (0, x0), (n, x1), params, policy).value
    rhs = base + (x1 - x0) * w + n * w * w / 2.0
    return lhs, rhs


# ---------------------------------------------------------------------------
# replicas

@dataclass(frozen=True)
class _Job:
    env_config: EnvironmentConfig
    seed: int
    v: float
    n: int
    params: ActionParams
    policy: DomainPolicy
    diag_times: tuple


def _run_job(job: _Job) -> dict:
    env = Environment(replace(job.env_config, master_seed=int(job.seed)))
    ends = [(t, job.v * t) for t in job.diag_times]
    sols = solve_point_to_point(env, (0, 0.0), (job.n, job.v * job.n), job.params, job.policy,
                                extra_ends=ends if ends else ())
    if not ends:
        sols = [sols]
    main = sols[0]
    return {
        "seed": int(job.seed),
        "value": main.value,
        "grid_value": main.grid_value,
        "excursion": max_excursion(main.trace.path),
        "el_res": main.trace.el_res,
        "refined": bool(main.trace.refined),
        "flags": sorted(main.flags),
        "diag": [s.value for s in sols[1:]],
    }


@dataclass
class ReplicaSamples:
    v: float
    n: int
    seeds: list
    values: np.ndarray
    grid_values: np.ndarray
    excursions: np.ndarray
    el_res: np.ndarray
    refined: np.ndarray
    flags: list
    diag_times: tuple = ()
    diag_values: np.ndarray | None = None

    @property
    def untrusted(self) -> int:
        return sum(1 for f in self.flags if f)


def _collect(v, n, res, diag_times) -> ReplicaSamples:
    return ReplicaSamples(
        v=float(v), n=int(n), seeds=[r["seed"] for r in res],
        values=np.array([r["value"] for r in res]),
        grid_values=np.array([r["grid_value"] for r in res]),
        excursions=np.array([r["excursion"] for r in res]),
        el_res=np.array([r["el_res"] for r in res]),
        refined=np.array([r["refined"] for r in res]),
        flags=[r["flags"] for r in res],
        diag_times=tuple(diag_times),
        diag_values=np.array([r["diag"] for r in res]) if diag_times else None,
    )


def sample_grid(env_config: EnvironmentConfig, seeds, vs, n: int, params: ActionParams | None = None,
                policy: DomainPolicy | None = None, workers: int = 1, diag_times=()) -> list[ReplicaSamples]:
    """Replicas for every (v, seed) cell, scheduled together; results in (v, seed) order."""
    params = params or ActionParams()
    policy = policy or DomainPolicy()
    seeds = [int(s) for s in seeds]
    jobs = [_Job(env_config, s, float(v), int(n), params, policy, tuple(diag_times))
            for v in vs for s in seeds]
    res = ordered_map(_run_job, jobs, workers)
    k = len(seeds)
    return [_collect(v, n, res[j * k:(j + 1) * k], diag_times) for j, v in enumerate(vs)]


def sample_point_actions(env_config: EnvironmentConfig, seeds, v: float, n: int,
                         params: ActionParams | None = None, policy: DomainPolicy | None = None,
                         workers: int = 1, diag_times=()) -> ReplicaSamples:
    return sample_grid(env_config, seeds, [v], n, params, policy, workers, diag_times)[0]


@dataclass
class ShapeEstimate:
    v: float
    n: int
    replicas: int
    mean: float
    stderr: float
    samples: np.ndarray
    subadditive: dict = field(default_factory=dict)
    richardson: float = math.nan
    untrusted: int = 0

    def __post_init__(self):
        if self.replicas < 2:
            raise ValueError("need at least two replicas")


def _mean_se(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    m = float(np.sum(x) / len(x))
    se = float(np.std(x, ddof=1) / math.sqrt(len(x)))
    return m, se


def estimate_alpha(env_config: EnvironmentConfig, seeds, v: float, n: int,
                   params: ActionParams | None = None, policy: DomainPolicy | None = None,
                   workers: int = 1, diagnostics: bool = True) -> ShapeEstimate:
    """Mean of A^{0,n}(0, vn)/n over seeds, with the n/4, n/2, n sequence."""
    diag = tuple(t for t in (n // 4, n // 2) if t >= 1) if diagnostics else ()
    s = sample_point_actions(env_config, seeds, v, n, params, policy, workers, diag)
    return shape_from_samples(s)


def shape_from_samples(s: ReplicaSamples) -> ShapeEstimate:
    per = s.values / s.n
    mean, se = _mean_se(per)
    sub = {}
    rich = math.nan
    if s.diag_values is not None:
        for j, t in enumerate(s.diag_times):
            m_t, se_t = _mean_se(s.diag_values[:, j] / t)
            sub[int(t)] = (m_t, se_t)
        sub[int(s.n)] = (mean, se)
        if s.n // 2 in sub:
            rich = 2.0 * mean - sub[s.n // 2][0]
    return ShapeEstimate(s.v, s.n, len(per), mean, se, per, sub, rich, s.untrusted)


@dataclass
class QuadraticLawReport:
    rows: list
    passed: bool
    C: float
    h: float


def quadratic_law_check(estimates, h: float, C: float = 1.0) -> QuadraticLawReport:
    """Residuals alpha(v) - alpha(0) - v^2/2 against 3(se_v + se_0) + C h."""
    est = {float(e.v): e for e in estimates}
    if 0.0 not in est:
        raise ValueError("an estimate at v = 0 is required")
    e0 = est[0.0]
    rows = []
    ok = True
    for v, e in sorted(est.items()):
        r = e.mean - e0.mean - v * v / 2.0
        bound = 3.0 * (e.stderr + e0.stderr) + C * h
        rows.append({"v": v, "alpha": e.mean, "stderr": e.stderr, "residual": r, "bound": bound,
                     "pass": abs(r) <= bound})
        ok &= abs(r) <= bound
    return QuadraticLawReport(rows, bool(ok), C, h)


def p_independence(e_p0: ShapeEstimate, e_p1: ShapeEstimate) -> dict:
    joint = math.sqrt(e_p0.stderr**2 + e_p1.stderr**2)
    diff = e_p0.mean - e_p1.mean
    return {"diff": diff, "joint_stderr": joint, "pass": abs(diff) <= 3.0 * joint}


# ---------------------------------------------------------------------------
# tails

@dataclass
class TailCurve:
    u: np.ndarray
    p_hat: np.ndarray
    scale: np.ndarray
    slope: float
    ci: tuple
    counts: np.ndarray

    @property
    def negative(self) -> bool:
        return self.ci[1] < 0.0


def _fit_slope(s: np.ndarray, p: np.ndarray) -> float:
    """Least-squares slope of log p against s; nan when s has no usable spread."""
    keep = p > 0
    if keep.sum() < 2:
        return math.nan
    x = s[keep] - s[keep].mean()
    y = np.log(p[keep])
    sxx = float(np.dot(x, x))
    if not (sxx > 0 and math.isfinite(sxx)):
        return math.nan
    return float(np.dot(x, y - y.mean()) / sxx)


def _tail_fit(dev: np.ndarray, u: np.ndarray, scale_fn, min_count: int, boot: int, seed: int) -> TailCurve:
    R = len(dev)
    counts = np.array([(dev > x).sum() for x in u])
    keep = counts >= min_count
    u = u[keep]
    counts = counts[keep]
    p = counts / R
    sc = scale_fn(u)
    slope = _fit_slope(sc, p)
    rng = np.random.default_rng(seed)
    bs = []
    for _ in range(boot):
        d = dev[rng.integers(0, R, R)]
        pb = np.array([(d > x).mean() for x in u])
        b = _fit_slope(sc, pb)
        if math.isfinite(b):
            bs.append(b)
    ci = (float(np.percentile(bs, 2.5)), float(np.percentile(bs, 97.5))) if bs else (math.nan, math.nan)
    return TailCurve(u, p, sc, slope, ci, counts)


def default_u_grid(dev: np.ndarray, points: int = 20) -> np.ndarray:
    top = float(np.quantile(dev, 0.99)) if len(dev) else 0.0
    if top <= 0:
        return np.array([0.0])
    return np.linspace(0.0, top, points)


def concentration_tail(values: np.ndarray, n: int, u_grid=None, min_count: int = 5,
                       boot: int = 400, seed: int = 0) -> TailCurve:
    """P(|A - mean A| > u) against s = u / (sqrt(n) ln n), with a bootstrap CI for the log-slope."""
    dev = np.abs(values - np.sum(values) / len(values))
    u = default_u_grid(dev) if u_grid is None else np.asarray(u_grid, dtype=np.float64)
    return _tail_fit(dev, u, lambda x: x / (math.sqrt(n) * math.log(n)), min_count, boot, seed)


def excursion_tail(excursions: np.ndarray, n: int, u_grid=None, min_count: int = 5,
                   boot: int = 400, seed: int = 0) -> TailCurve:
    """P(max excursion > u) against u^2 / n."""
    exc = np.asarray(excursions, dtype=np.float64)
    u = default_u_grid(exc) if u_grid is None else np.asarray(u_grid, dtype=np.float64)
    return _tail_fit(exc, u, lambda x: x * x / n, min_count, boot, seed)
