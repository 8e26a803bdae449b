"""Experiment dispatch: config -> output files + manifest."""

from __future__ import annotations

import math
import os
import time
from dataclasses import replace
from pathlib import Path as FsPath

import numpy as np

from . import io, kernels, manifest
from .attraction import (InitialDataSpec, SlopeData, classify_initial, convergence_equivalence_check,
                         equivalence_families, metric_d, pullback_experiment, random_profile,
                         summarize_pullback)
from .busemann import BusemannSolver, Window, shock_genealogy
from .config import RunConfig
from .environment import Environment
from .hopf_lax import EvolveParams, GridSpec, evolve, slope_probe, velocity_from
from .minimizers import BackwardSolver
from .shape import (concentration_tail, excursion_tail, quadratic_law_check, sample_grid,
                    shape_from_samples)

# flags that make a run "untrusted" (exit code 2)
UNTRUSTED = {"boundary_contact", "no_pairing", "no_convergence", "refine_failed", "tail_fit_failed",
             "acceptance_failed"}


def _env(cfg: RunConfig, seed: int) -> Environment:
    return Environment(replace(cfg.environment, master_seed=int(seed)))


def _initial(spec: dict) -> InitialDataSpec:
    sl = spec.get("slopes")
    if sl is not None:
        sl = [float(v) for v in sl]
        sl = SlopeData.limits(*sl) if len(sl) == 2 else SlopeData(*sl)
    return InitialDataSpec(spec["form"], dict(spec.get("params") or {}), sl)


class _Out:
    """Collects written files and flags for one run."""

    def __init__(self, out_dir):
        self.dir = io.ensure_dir(out_dir)
        self.files: list = []
        self.flags: set = set()

    def csv(self, name, header, rows, meta=None):
        self.files.append(io.write_csv(self.dir / name, header, rows, meta))

    def json(self, name, obj):
        self.files.append(io.write_json(self.dir / name, obj))

    def add(self, paths):
        self.files.extend(paths if isinstance(paths, (list, tuple)) else [paths])


# ---------------------------------------------------------------------------
# experiments

def _env_sample(cfg, out, workers):
    P = cfg.params
    t0, t1 = (int(v) for v in P["times"])
    c0, c1 = (int(v) for v in P["cells"])
    lo, hi = (float(v) for v in P["window"])
    h = cfg.policy.h
    xs = np.arange(math.floor(lo / h), math.ceil(hi / h) + 1) * h
    for s in cfg.seeds:
        env = _env(cfg, s)
        rows = [(n, i, p) for n in range(t0, t1 + 1) for i in range(c0, c1 + 1)
                for p in env.cell_points(n, i)]
        out.add(io.write_cell_points(out.dir / f"cell_points_s{s}.csv", rows))
        prow = []
        for n in range(t0, t1 + 1):
            F, f = env.grid_values(n, xs, h, order=1)[:2]
            prow.extend(zip([n] * len(xs), xs, F, f))
        out.csv(f"potential_s{s}.csv", ["n", "x", "F", "force"], prow)


def _evolve(cfg, out, workers):
    P = cfg.params
    spec = _initial(P["initial"])
    m, n = int(P["start"]), int(P["end"])
    if n <= m:
        raise ValueError("evolve needs end > start")
    cls = classify_initial(spec)
    for s in cfg.seeds:
        env = _env(cfg, s)
        grid = cfg.policy.grid(float(P["center"]), n - m)
        W0 = spec.profile(grid, m)
        final, stack = evolve(env, W0, n, EvolveParams(p=cfg.action.p), keep_maps="last")
        vel = velocity_from(final, stack.maps[-1])
        probe = slope_probe(final)
        # edge contact far from the center is expected; only the center node matters
        out.flags |= final.flags - {"boundary_contact"}
        if not final.trusted_mask()[grid.index_of(float(P["center"]))]:
            out.flags.add("boundary_contact")
        extra = {"seed": s, "classification": cls.kind, "v": cls.v, "slope_probe": probe,
                 "boundary_contact_any": "boundary_contact" in final.flags}
        out.add(io.write_profile(out.dir / f"potential_s{s}.csv", final, extra))
        out.add(io.write_profile(out.dir / f"velocity_s{s}.csv", vel, extra))


def _minimizer(cfg, out, workers):
    P = cfg.params
    n, x = int(P["end"][0]), float(P["end"][1])
    m = int(P["start"])
    v = float(P["v"])
    for s in cfg.seeds:
        env = _env(cfg, s)
        if P["mode"] == "linear":
            solver = BackwardSolver(env, v, m, n, x - v * (n - m) / 2.0, cfg.policy, cfg.action, "linear")
        elif P["mode"] == "point":
            x0 = float(P["start_x"])
            solver = BackwardSolver(env, 0.0, m, n, 0.5 * (x0 + x), cfg.policy, cfg.action, "point",
                                    start_x=x0)
        else:
            raise ValueError(f"unknown minimizer mode {P['mode']!r}")
        tr = solver.trace(n, x, bool(P["refine"]), tol=cfg.el_tol)
        if P["refine"] and not tr.el_res <= cfg.el_tol:
            tr.flags.add("refine_failed")
        out.flags |= tr.flags
        out.add(io.write_trace(out.dir / f"trace_s{s}", tr))


def _diag_times(n):
    return tuple(t for t in (n // 4, n // 2) if t >= 1)


def _samples_rows(samples):
    for sm in samples:
        for j, seed in enumerate(sm.seeds):
            yield (sm.v, seed, sm.values[j], sm.grid_values[j], sm.excursions[j], sm.el_res[j],
                   bool(sm.refined[j]), ";".join(sm.flags[j]))


_SAMPLE_HEADER = ["v", "seed", "value", "grid_value", "excursion", "el_res", "refined", "flags"]


def _shape(cfg, out, workers):
    P = cfg.params
    n = int(P["n"])
    vs = [float(v) for v in P["vs"]]
    diag = _diag_times(n) if P["diagnostics"] else ()
    if len(cfg.seeds) < 2:
        raise ValueError("shape estimates need at least two seeds")
    samples = sample_grid(cfg.environment, cfg.seeds, vs, n, cfg.action, cfg.policy, workers, diag)
    ests = [shape_from_samples(sm) for sm in samples]
    for sm in samples:
        for f in sm.flags:
            out.flags |= set(f)
    out.csv("shape.csv", ["v", "n", "mean", "stderr", "replicas"],
            ((e.v, e.n, e.mean, e.stderr, e.replicas) for e in ests))
    out.csv("samples.csv", _SAMPLE_HEADER, _samples_rows(samples))
    if diag:
        out.csv("subadditive.csv", ["v", "t", "mean", "stderr"],
                ((e.v, t, m_, se) for e in ests for t, (m_, se) in sorted(e.subadditive.items())))
    summary = {"p": cfg.action.p, "h": cfg.policy.h,
               "richardson": {repr(e.v): e.richardson for e in ests}}
    if 0.0 in vs:
        rep = quadratic_law_check(ests, cfg.policy.h)
        summary["quadratic_law"] = {"passed": rep.passed, "rows": rep.rows}
    out.json("shape_summary.json", summary)


def _concentration(cfg, out, workers):
    P = cfg.params
    n = int(P["n"])
    v = float(P["v"])
    sm = sample_grid(cfg.environment, cfg.seeds, [v], n, cfg.action, cfg.policy, workers)[0]
    for f in sm.flags:
        out.flags |= set(f)
    out.csv("samples.csv", _SAMPLE_HEADER, _samples_rows([sm]))
    ct = concentration_tail(sm.values, n, boot=int(P["bootstrap"]))
    et = excursion_tail(sm.excursions, n, boot=int(P["bootstrap"]))
    rows = []
    for kind, tc in (("action", ct), ("excursion", et)):
        rows.extend((kind, u, sc, p, c) for u, sc, p, c in zip(tc.u, tc.scale, tc.p_hat, tc.counts))
        if not tc.negative:
            out.flags.add("tail_fit_failed")
    out.csv("tails.csv", ["kind", "u", "scale", "p_hat", "count"], rows)
    out.json("tails.json", {kind: {"slope": tc.slope, "ci": list(tc.ci), "negative": tc.negative}
                            for kind, tc in (("action", ct), ("excursion", et))})


def _busemann(cfg, out, workers):
    P = cfg.params
    pts = [(int(p[0]), float(p[1])) for p in P["points"]]
    if len(pts) < 2:
        raise ValueError("busemann needs at least two points")
    rows = []
    for s in cfg.seeds:
        env = _env(cfg, s)
        solver = BusemannSolver(env, float(P["v"]), pts, int(P["horizon"]), cfg.policy, bool(P["refine"]))
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                est = solver.estimate(pts[a], pts[b], float(P["c"]))
                out.flags |= est.flags
                ser = est.residual_series
                last = abs(ser[-1] - ser[-2]) if len(ser) >= 2 else math.nan
                rows.append((s, *pts[a], *pts[b], est.value, len(est.pairing_ks_used), last, est.reliable))
    out.csv("busemann.csv", ["seed", "n1", "x1", "n2", "x2", "value", "n_pairings", "last_residual",
                             "reliable"], rows)


def _shocks(cfg, out, workers):
    P = cfg.params
    t0, t1 = (int(v) for v in P["times"])
    win = Window(float(P["window"][0]), float(P["window"][1]), cfg.policy.h)
    for s in cfg.seeds:
        env = _env(cfg, s)
        forest = shock_genealogy(env, float(P["v"]), win, range(t0, t1 + 1), int(P["horizon"]),
                                 policy=cfg.policy)
        out.json(f"shocks_s{s}.json", forest.to_json())


def _pullback(cfg, out, workers):
    P = cfg.params
    spec = _initial(P["initial"])
    v = None if P["v"] is None else float(P["v"])
    rows = pullback_experiment(cfg.environment, spec, v, [int(m) for m in P["ms"]], cfg.seeds,
                               int(P["n_obs"]), tuple(float(w) for w in P["window"]),
                               int(P["ref_horizon"]), cfg.policy, int(P["N_max"]), workers)
    if any(r.boundary_flag for r in rows):
        out.flags.add("boundary_contact")
    out.csv("pullback.csv", ["seed", "m", "d", "slope_probe", "boundary_flag"],
            ((r.seed, r.m, r.d, r.preimage_slope, r.boundary_flag) for r in rows))
    summ = summarize_pullback(rows)
    summ["classification"] = classify_initial(spec).kind
    out.json("pullback_summary.json", summ)


def _metric_check(cfg, out, workers):
    P = cfg.params
    N_max = int(P["N_max"])
    grid = GridSpec.centered(0.0, 20.0, cfg.policy.h)
    rows = []
    for s in cfg.seeds:
        rng = np.random.default_rng(int(s))
        for k in range(int(P["triples"])):
            a, b, c = (random_profile(rng, grid) for _ in range(3))
            dab, dba = metric_d(a, b, N_max), metric_d(b, a, N_max)
            dac, dbc, daa = metric_d(a, c, N_max), metric_d(b, c, N_max), metric_d(a, a, N_max)
            rows.append((s, k, daa, abs(dab - dba), dac - dab - dbc))
    worst = {"identity": max(r[2] for r in rows), "symmetry": max(r[3] for r in rows),
             "triangle": max(r[4] for r in rows)}
    ok = worst["identity"] <= 1e-12 and worst["symmetry"] <= 1e-12 and worst["triangle"] <= 1e-12
    fam = {}
    for name, (seq, lim, expect) in equivalence_families(grid).items():
        rep = convergence_equivalence_check(seq, lim, N_max)
        fam[name] = {"d": rep.d, "pointwise": rep.pointwise, "d_converges": rep.d_converges,
                     "pointwise_converges": rep.pointwise_converges, "expected": expect,
                     "pass": rep.consistent and rep.d_converges == expect}
        ok &= fam[name]["pass"]
    if not ok:
        out.flags.add("acceptance_failed")
    out.csv("metric_axioms.csv", ["seed", "triple", "d_self", "asymmetry", "triangle_excess"], rows)
    out.json("metric_check.json", {"worst": worst, "families": fam, "pass": ok})


DISPATCH = {
    "env-sample": _env_sample,
    "evolve": _evolve,
    "minimizer": _minimizer,
    "shape": _shape,
    "concentration": _concentration,
    "busemann": _busemann,
    "shocks": _shocks,
    "pullback": _pullback,
    "metric-check": _metric_check,
}


def run(cfg: RunConfig, out_dir, workers: int = 1) -> dict:
    """Run one experiment; writes outputs and ``manifest.json`` into out_dir."""
    t = time.perf_counter()
    out = _Out(out_dir)
    DISPATCH[cfg.kind](cfg, out, int(workers))
    runtime = {"wall_clock_s": time.perf_counter() - t, "workers": int(workers), "backend": kernels.BACKEND}
    man = manifest.build(cfg, out.files, out.flags, out.dir, runtime)
    manifest.write(man, out.dir)
    return man


def untrusted(man: dict) -> bool:
    return bool(set(man["flags"]) & UNTRUSTED)


def replay(man: dict, out_dir, workers: int = 1) -> tuple[dict, list[str]]:
    """Re-run the manifest's config into out_dir; returns (new manifest, differing outputs)."""
    from .config import from_dict
    cfg = from_dict(man["config"])
    new = run(cfg, out_dir, workers)
    diff = sorted(k for k in set(man["outputs"]) | set(new["outputs"])
                  if man["outputs"].get(k) != new["outputs"].get(k))
    return new, diff


def output_dir(default) -> FsPath:
    """``KICKWAVE_OUT`` when set, else ``default``."""
    env = os.environ.get("KICKWAVE_OUT")
    return FsPath(env) if env else FsPath(default)
