"""Acceptance battery: thirteen numbered checks at fixed scales and tolerances.

Each check returns a ``CriterionResult``; ``run_battery`` runs a selection and
reports one line per check.  Runtime limits are part of the pass condition
where a limit is stated.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np

from . import kernels, manifest
from .action import ActionParams, Path, el_residual
from .attraction import (InitialDataSpec, convergence_equivalence_check, equivalence_families, metric_d,
                         pullback_experiment, random_profile, summarize_pullback)
from .busemann import BusemannSolver, Window, fixed_point_deviation, global_potential, global_velocity
from .config import from_dict
from .environment import Environment, EnvironmentConfig
from .hopf_lax import (EvolveParams, GridProfile, GridSpec, evolve, evolve_one, quadratic_envelope,
                       slope_probe)
from .minimizers import BackwardSolver, DomainPolicy, crossing_check, trace_back
from .shape import (concentration_tail, excursion_tail, p_independence, quadratic_law_check, sample_grid,
                    shape_from_samples, shear_action_identity, solve_point_to_point)

H = 2.0**-6


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    limit: float | None = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        lim = f" (limit {self.limit:.0f}s)" if self.limit else ""
        summary = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items() if not isinstance(v, (dict, list)))
        return f"[{tag}] criterion {self.number:2d} {self.name}: {summary}; {self.seconds:.1f}s{lim}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


def _env(seed: int, **kw) -> Environment:
    return Environment(EnvironmentConfig(master_seed=int(seed), **kw))


# ---------------------------------------------------------------------------
# 1

def c01_envelope(inputs: int = 200, N: int = 4096, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    mono = True
    attained = 0.0
    for k in range(inputs):
        kind = k % 4
        if kind == 0:
            V = rng.normal(0.0, 10.0, N)
        elif kind == 1:
            V = rng.uniform(-1.0, 1.0, N) * rng.uniform(0.0, 1e3)
        elif kind == 2:
            V = np.cumsum(rng.normal(0.0, 1.0, N)) * H
        else:
            V = rng.integers(-3, 4, N).astype(np.float64)  # many ties
        grid = GridSpec(-N * H / 2, H, N)
        U, arg = quadratic_envelope(V, grid)
        Un, _ = kernels.naive_envelope(V, H, with_arg=False)
        worst = max(worst, float(np.max(np.abs(U - Un) / (1.0 + np.abs(Un)))))
        mono &= bool(np.all(np.diff(arg) >= 0))
        d = (np.arange(N) - arg) * H
        attained = max(attained, float(np.max(np.abs(V[arg] + 0.5 * d * d - U))))
    ok = worst <= 1e-12 and mono and attained <= 1e-12
    return ok, {"max_rel_err": worst, "argmin_monotone": mono, "argmin_attains": attained}


# ---------------------------------------------------------------------------
# 2

def _all_paths(N: int, L: int) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(N)] * L, indexing="ij"), -1).reshape(-1, L)


def c02_exhaustive(envs: int = 50, N: int = 15, steps: int = 4, seed: int = 1):
    rng = np.random.default_rng(seed)
    grid = GridSpec(-0.25 * (N - 1) / 2, 0.25, N)
    x = grid.x
    paths = _all_paths(N, steps + 1)
    worst_val = 0.0
    worst_path = 0.0
    for e in range(envs):
        env = _env(1000 + e, intensity=2.0)
        p = float(rng.choice([0.0, 0.5, 1.0]))
        W0 = GridProfile(grid, 0, rng.uniform(-1.0, 1.0, N))
        F = np.array([env.grid_values(t, x, grid.h)[0] for t in range(steps + 1)])
        final, stack = evolve(env, W0, steps, EvolveParams(p=p))
        cost = W0.values[paths[:, 0]].copy()
        for t in range(steps):
            a, b = paths[:, t], paths[:, t + 1]
            cost += 0.5 * (x[b] - x[a]) ** 2 + p * F[t, a] + (1.0 - p) * F[t + 1, b]
        best = np.full(N, np.inf)
        np.minimum.at(best, paths[:, -1], cost)
        worst_val = max(worst_val, float(np.max(np.abs(best - final.values) / (1.0 + np.abs(best)))))
        for i in range(N):
            idx = np.searchsorted(x, trace_back(stack, i).positions - 1e-12)
            c = W0.values[idx[0]] + sum(0.5 * (x[idx[t + 1]] - x[idx[t]]) ** 2 + p * F[t, idx[t]]
                                        + (1.0 - p) * F[t + 1, idx[t + 1]] for t in range(steps))
            worst_path = max(worst_path, abs(c - best[i]) / (1.0 + abs(best[i])))
    ok = worst_val <= 1e-12 and worst_path <= 1e-12
    return ok, {"max_value_err": worst_val, "max_traced_path_err": worst_path}


# ---------------------------------------------------------------------------
# 3

def c03_zero_forcing():
    zero = Environment.zero()
    grid = GridSpec.centered(0.0, 8.0, H)
    W = GridProfile(grid, 0, 0.5 * grid.x**2)
    U, _ = evolve_one(zero, W)
    inner = np.abs(grid.x) <= 4.0
    err = float(np.max(np.abs(U.values[inner] - 0.25 * grid.x[inner] ** 2)))
    C = 1.0
    samples = sample_grid(EnvironmentConfig(intensity=0.0), [0, 1], [0.0, 0.5, 1.0, -0.75], 16)
    alpha_err = max(float(np.max(np.abs(s.values / s.n - s.v**2 / 2))) for s in samples)
    vel_err = 0.0
    for v in (0.0, 0.5, -0.25):
        u = global_velocity(zero, v, 0, Window(-4.0, 4.0), horizon=32)
        vel_err = max(vel_err, float(np.max(np.abs(u.values - v))))
    ok = err <= C * H * H and alpha_err == 0.0 and vel_err == 0.0
    return ok, {"quarter_x2_err": err, "bound": C * H * H, "alpha_err": alpha_err, "u_minus_v": vel_err}


# ---------------------------------------------------------------------------
# 4

def _dyadic(rng, lo, hi, bits=12):
    return float(np.round(rng.uniform(lo, hi) * 2**bits) / 2**bits)


def c04_shear(samples: int = 20, n: int = 64, seed: int = 4):
    rng = np.random.default_rng(seed)
    bit_exact = True
    worst = 0.0
    for k in range(samples):
        env = _env(400 + k)
        a, w = _dyadic(rng, -2.0, 2.0), _dyadic(rng, -0.5, 0.5)
        sh = env.shear(a, w)
        ts = rng.integers(-8, 72, 256)
        xs = np.round(rng.uniform(-40, 40, 256) * 2**10) / 2**10
        for o1, o2 in zip(sh.evaluate(ts, xs + a + w * ts, order=2), env.evaluate(ts, xs, order=2)):
            bit_exact &= bool(np.array_equal(o1, o2))
        xg = np.arange(-256, 257) * H
        for t in (0, 5, 63):
            g1 = sh.grid_values(t, xg + (a + w * t), H, order=2)
            g2 = env.grid_values(t, xg, H, order=2)
            bit_exact &= all(np.array_equal(u, v) for u, v in zip(g1, g2))
        # identity with unrestricted real parameters
        x0, x1 = rng.uniform(-1.0, 1.0), rng.uniform(-4.0, 4.0)
        lhs, rhs = shear_action_identity(env, n, x0, x1, rng.uniform(-2.0, 2.0), rng.uniform(-0.5, 0.5))
        worst = max(worst, abs(lhs - rhs))
    return bit_exact and worst <= 1e-6, {"bit_exact": bit_exact, "max_identity_err": worst}


# ---------------------------------------------------------------------------
# 5

def c05_shape(replicas: int = 200, n: int = 128, workers: int = 1, seed0: int = 0):
    seeds = range(seed0, seed0 + replicas)
    cfg = EnvironmentConfig()
    pol = DomainPolicy(h=H)
    p1 = sample_grid(cfg, seeds, [0.0, 0.5, 1.0], n, ActionParams(1.0), pol, workers)
    ests = [shape_from_samples(s) for s in p1]
    rep = quadratic_law_check(ests, H, C=1.0)
    p0 = shape_from_samples(sample_grid(cfg, seeds, [0.0], n, ActionParams(0.0), pol, workers)[0])
    pind = p_independence(p0, ests[0])
    untrusted = sum(s.untrusted for s in p1)
    det = {"alpha0": ests[0].mean, "alpha0.5": ests[1].mean, "alpha1": ests[2].mean,
           "max_residual_ratio": max(abs(r["residual"]) / r["bound"] for r in rep.rows),
           "p_diff": pind["diff"], "p_joint_se": pind["joint_stderr"], "untrusted": untrusted,
           "untrusted_flags": "+".join(sorted({f for s in p1 for fl in s.flags for f in fl})) or "none"}
    return rep.passed and pind["pass"], det


# ---------------------------------------------------------------------------
# 6

def c06_cocycle(runs: int = 50, horizon: int = 32, seed: int = 6, margin: float = 512.0):
    rng = np.random.default_rng(seed)
    # wide grid: the probes see slopes over hundreds of units
    pol = DomainPolicy(h=H, margin=margin)
    worst_split = 0.0
    worst_slope = 0.0
    used = 0
    for r in range(runs):
        env = _env(600 + r)
        vl, vr = (float(np.round(rng.uniform(-1.0, 1.0), 3)) for _ in range(2))
        spec = InitialDataSpec("piecewise_linear", {"breaks": [0.0], "slopes": [vl, vr]})
        grid = pol.grid(0.0, horizon)
        W0 = spec.profile(grid, 0)
        full, _ = evolve(env, W0, horizon)
        k = int(rng.integers(1, horizon))
        mid, _ = evolve(env, W0, k)
        two, _ = evolve(env, mid, horizon)
        worst_split = max(worst_split, float(np.max(np.abs(full.values - two.values))))
        left, right = slope_probe(full)
        if not (math.isfinite(left) and math.isfinite(right)):
            continue  # trusted range too small to probe: boundary-flagged run
        used += 1
        worst_slope = max(worst_slope, abs(left - vl), abs(right - vr))
    tol = 2 * H + 1e-3
    ok = worst_split <= 1e-10 and worst_slope <= tol and used > 0
    return ok, {"max_split_err": worst_split, "max_slope_err": worst_slope, "slope_tol": tol,
                "probed_runs": used}


# ---------------------------------------------------------------------------
# 7

def c07_minimizers(seeds: int = 100, horizon: int = 32, ends: int = 5):
    pol = DomainPolicy(h=H)
    params = ActionParams(1.0)
    total = 0
    small = 0
    order_viol = 0
    cross_viol = 0
    for s in range(seeds):
        env = _env(700 + s)
        xs = np.linspace(-2.0, 2.0, ends)
        groups = []
        solver = BackwardSolver(env, 0.0, 0, horizon, 0.0, pol, params, "point", start_x=0.0)
        groups.append(("point", [solver.trace(horizon, float(x)) for x in xs]))
        v = 0.5
        solver = BackwardSolver(env, v, -horizon, 0, -v * horizon / 2, pol, params, "linear")
        groups.append(("linear", [solver.trace(0, float(x)) for x in xs]))
        for kind, trs in groups:
            for tr in trs:
                total += 1
                small += el_residual(env, tr.path) <= 1e-8
            for a, b in zip(trs, trs[1:]):
                if np.any(a.path.positions > b.path.positions + 1e-9):
                    order_viol += 1
            if kind == "point":
                for i in range(len(trs)):
                    for j in range(i + 1, len(trs)):
                        rep = crossing_check(trs[i].path, trs[j].path)
                        cross_viol += len(rep.crossings)
    frac = small / total
    ok = frac >= 0.99 and order_viol == 0 and cross_viol == 0
    return ok, {"el_ok_fraction": frac, "traces": total, "order_violations": order_viol,
                "crossings": cross_viol}


# ---------------------------------------------------------------------------
# 8

def c08_tails(replicas: int = 500, n: int = 256, workers: int = 1, seed0: int = 10_000):
    s = sample_grid(EnvironmentConfig(), range(seed0, seed0 + replicas), [0.0], n, ActionParams(1.0),
                    DomainPolicy(h=H), workers)[0]
    ct = concentration_tail(s.values, n)
    et = excursion_tail(s.excursions, n)
    ok = ct.negative and et.negative
    return ok, {"action_slope": ct.slope, "action_ci_hi": ct.ci[1], "excursion_slope": et.slope,
                "excursion_ci_hi": et.ci[1], "untrusted": s.untrusted,
                "untrusted_flags": "+".join(sorted({f for fl in s.flags for f in fl})) or "none"}


# ---------------------------------------------------------------------------
# 9

def c09_busemann(seeds: int = 50, horizon: int = 256, tol: float = 2e-2, ub_tol: float = 1e-2):
    pol = DomainPolicy(h=H)
    P = [(0, 0.0), (2, 1.0), (4, -1.0)]
    anti = 0.0
    add = 0.0
    ub_viol = 0
    worst_ub = -math.inf
    unreliable = 0
    for s in range(seeds):
        env = _env(900 + s)
        bs = BusemannSolver(env, 0.0, P, horizon, pol, refine=True)
        B = {}
        for i in range(3):
            for j in range(3):
                if i != j:
                    e = bs.estimate(P[i], P[j])
                    B[i, j] = e.value
                    unreliable += not e.reliable
        anti = max(anti, max(abs(B[i, j] + B[j, i]) for i in range(3) for j in range(3) if i < j))
        add = max(add, abs(B[0, 2] - B[0, 1] - B[1, 2]))
        for i, j in ((0, 1), (1, 2), (0, 2)):
            A = solve_point_to_point(env, P[i], P[j], ActionParams(1.0), pol).value
            worst_ub = max(worst_ub, B[i, j] - A)
            ub_viol += B[i, j] > A + ub_tol
    ok = anti <= tol and add <= tol and ub_viol == 0
    return ok, {"max_antisymmetry": anti, "max_additivity": add, "upper_bound_violations": ub_viol,
                "max_B_minus_A": worst_ub, "unreliable_pairs": unreliable}


# ---------------------------------------------------------------------------
# 10

def c10_global(seeds: int = 20, times=range(-4, 5), horizon: int = 256, tol: float = 1e-2):
    pol = DomainPolicy(h=H)
    win = Window(-8.0, 8.0, H)
    times = list(times)
    worst = 0.0
    nodes = []
    for s in range(seeds):
        env = _env(1100 + s)
        U = global_potential(env, 0.0, times, win, horizon, pol)
        for a, b in zip(U, U[1:]):
            r = fixed_point_deviation(env, a, b)
            nodes.append(r["nodes"])
            if r["nodes"]:
                worst = max(worst, r["max_dev"])
    det = {"max_fixed_point_dev": worst, "min_nodes": min(nodes)}
    ok = worst <= tol and min(nodes) > 0
    for v in (0.0, 0.5):
        means = []
        for s in range(seeds):
            u = global_velocity(_env(1200 + s), v, 0, win, horizon, pol)
            lo, hi = u.trusted
            means.append(float(np.mean(u.values[lo:hi])))
        m = float(np.mean(means))
        se = float(np.std(means, ddof=1) / math.sqrt(len(means)))
        det[f"mean_u_v{v}"] = m
        det[f"se_v{v}"] = se
        ok &= abs(m - v) <= 3.0 * se
    return ok, det


# ---------------------------------------------------------------------------
# 11

def c11_pullback(seeds: int = 30, ms=(-16, -32, -64, -128), workers: int = 1):
    rows = pullback_experiment(EnvironmentConfig(), InitialDataSpec("zero"), 0.0, list(ms), range(seeds),
                               policy=DomainPolicy(h=H), workers=workers)
    summ = summarize_pullback(rows)
    med = [summ["median_d"][m] for m in ms]
    nonincr = all(b <= a for a, b in zip(med, med[1:]))
    halved = med[-1] <= 0.5 * med[0]
    slope = summ["median_preimage_slope"][ms[-1]]
    det = {f"median_d_{-m}": d for m, d in zip(ms, med)}
    det.update({"median_slope_last": slope, "flagged_rows": summ["flagged"]})
    return nonincr and halved and abs(slope) <= 0.1, det


# ---------------------------------------------------------------------------
# 12

def c12_metric(triples: int = 200, seed: int = 12, N_max: int = 16):
    rng = np.random.default_rng(seed)
    grid = GridSpec.centered(0.0, 20.0, H)
    worst = 0.0
    for _ in range(triples):
        a, b, c = (random_profile(rng, grid) for _ in range(3))
        dab = metric_d(a, b, N_max)
        worst = max(worst, metric_d(a, a, N_max), abs(dab - metric_d(b, a, N_max)),
                    metric_d(a, c, N_max) - dab - metric_d(b, c, N_max))
    fam_ok = True
    det = {"axiom_excess": worst}
    for name, (seq, lim, expect) in equivalence_families(grid).items():
        rep = convergence_equivalence_check(seq, lim, N_max)
        good = rep.consistent and rep.d_converges == expect
        det[name] = "ok" if good else "wrong"
        fam_ok &= good
    return worst <= 1e-12 and fam_ok, det


# ---------------------------------------------------------------------------
# 13

def c13_reproducibility(worker_counts=(1, 2, 8), out_root=None):
    cfg = from_dict({
        "experiment": {"kind": "shape", "seed_count": 8,
                       "params": {"vs": [0.0, 0.5], "n": 16, "diagnostics": True}},
    })
    mans = []
    with tempfile.TemporaryDirectory(dir=out_root) as tmp:
        from .runner import run
        for w in worker_counts:
            mans.append(run(cfg, FsPath(tmp) / f"w{w}", workers=w))
    same = all(manifest.same(mans[0], m) for m in mans[1:])
    return same, {"manifests_identical": same, "outputs": len(mans[0]["outputs"]),
                  "config_hash": mans[0]["config_hash"][:12]}


# ---------------------------------------------------------------------------

CRITERIA = {
    1: ("envelope oracle", c01_envelope, 10.0),
    2: ("exhaustive-path oracle", c02_exhaustive, 30.0),
    3: ("zero-forcing analytics", c03_zero_forcing, 5.0),
    4: ("shear identities", c04_shear, 120.0),
    5: ("quadratic shape law", c05_shape, 1800.0),
    6: ("cocycle and slope invariance", c06_cocycle, None),
    7: ("minimizer properties", c07_minimizers, None),
    8: ("concentration and excursion tails", c08_tails, 3600.0),
    9: ("Busemann algebra", c09_busemann, None),
    10: ("global-solution fixed point", c10_global, None),
    11: ("pullback attraction", c11_pullback, None),
    12: ("metric module", c12_metric, None),
    13: ("reproducibility across workers", c13_reproducibility, None),
}

_TAKES_WORKERS = {5, 8, 11}


def run_criterion(number: int, workers: int = 1) -> CriterionResult:
    name, fn, limit = CRITERIA[number]
    t = time.perf_counter()
    try:
        ok, det = fn(workers=workers) if number in _TAKES_WORKERS else fn()
    except Exception as e:  # a crash is a failure of that criterion, not of the battery
        ok, det = False, {"error": f"{type(e).__name__}: {e}"}
    sec = time.perf_counter() - t
    if limit is not None and sec > limit:
        ok = False
        det["over_time_limit"] = True
    return CriterionResult(number, name, bool(ok), det, sec, limit)


def run_battery(numbers=None, workers: int = 1, echo=print) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if numbers is None else list(numbers)
    out = []
    for k in numbers:
        r = run_criterion(k, workers)
        if echo:
            echo(r.line())
        out.append(r)
    return out
