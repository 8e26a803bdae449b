import math

import numpy as np
import pytest
from scipy.optimize import brentq

from kickwave.action import ActionParams, Path, el_residual, el_step, total_action
from kickwave.environment import make_environment
from kickwave.hopf_lax import GridSpec, evolve, linear_profile, point_profile
from kickwave.minimizers import (BackwardSolver, ConeSpec, DomainPolicy, crossing_check, one_sided_approx,
                                 pairing_times, refine, straightness_check, trace_back, width_Wk)
from tests.conftest import single_bump


def test_trace_zero_env_constant_path(zero_env):
    g = GridSpec(-4.0, 0.125, 65)
    _, stack = evolve(zero_env, linear_profile(g, 0, 0.0), 5)
    p = trace_back(stack, g.index_of(1.0))
    assert np.all(p.positions == 1.0)


def test_trace_point_constrained_straight_line(zero_env):
    h = 2.0**-6
    g = GridSpec(-8.0, h, int(16 / h) + 1)
    _, stack = evolve(zero_env, point_profile(g, 0, 0.0), 8)
    p = trace_back(stack, g.index_of(3.0))
    assert np.max(np.abs(p.positions - np.linspace(0, 3, 9))) <= h


def test_refine_straight_line_unchanged(zero_env):
    path = Path(0, np.linspace(0, 2, 5))
    tr = refine(zero_env, path)
    assert tr.el_res == 0.0 and tr.refined
    assert np.array_equal(tr.path.positions, path.positions)


def test_refine_single_bump_three_points():
    # path (0, y, 0) through one bump at time 1: stationarity 2y + xi phi'((y - eta)/kappa)/kappa = 0
    eta, xi, kap = 0.3, -1.0, 0.8
    env = single_bump(eta, xi, kap, tau=1)
    tr = refine(env, Path(0, [0.0, 0.1, 0.0]))

    def g(y):
        z = (y - eta) / kap
        return 2 * y + xi * (-4 * z * (1 - z * z)) / kap
    # the descent stays in the basin around the bump center
    y_star = brentq(g, 0.0, eta + kap * 0.999)
    assert tr.refined
    assert tr.path.positions[1] == pytest.approx(y_star, abs=1e-9)


def test_refine_never_increases_action(rand_env):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.cumsum(rng.normal(0, 0.5, 12))
        before = total_action(rand_env, Path(0, x))
        tr = refine(rand_env, Path(0, x))
        assert tr.action <= before + 1e-12
        assert tr.path.positions[0] == x[0] and tr.path.positions[-1] == x[-1]


def test_el_iteration_reproduces_refined_path(rand_env):
    solver = BackwardSolver(rand_env, 0.0, -16, 0, 0.0)
    tr = solver.trace(0, 0.5)
    assert tr.refined and tr.el_res <= 1e-8
    x = tr.path.positions
    t0 = tr.path.start_time
    for k in range(1, len(x) - 1):
        nxt = el_step(rand_env, t0 + k, x[k - 1], x[k])
        assert nxt == pytest.approx(x[k + 1], abs=1e-8)


def test_one_sided_zero_env_is_a_line(zero_env):
    tr = one_sided_approx(zero_env, (5, 1.0), 0.5, -11)
    expect = 1.0 + 0.5 * (tr.path.times - 5)
    assert np.max(np.abs(tr.path.positions - expect)) <= 1e-9


def test_one_sided_shear_maps_pointwise(rand_env):
    w = 0.25
    a = tr0 = one_sided_approx(rand_env, (0, 0.5), 0.0, -32)
    sh = rand_env.shear(0.0, w)
    tr1 = one_sided_approx(sh, (0, 0.5), w, -32)
    mapped = tr0.path.positions + w * tr0.path.times
    assert np.max(np.abs(tr1.path.positions - mapped)) <= 1e-8
    del a


@pytest.mark.parametrize("mode,drift", [("point", 0.37), ("linear", 0.3), ("point", 0.0)])
def test_moving_frame_values_match_path_actions(rand_env, mode, drift):
    from kickwave.action import kinetic_action, potential_action
    center = 0.0 if mode == "linear" else None
    s = BackwardSolver(rand_env, 0.3, 0, 16, center, mode=mode, start_x=0.1, drift=drift)
    for x in (0.5, 2.0, -1.0):
        path, _, _ = s.grid_path(16, x)
        a = kinetic_action(path) + potential_action(rand_env, path)
        if mode == "linear":
            a += 0.3 * path.positions[0]
        assert s.grid_value(16, x) == pytest.approx(a, abs=1e-12)


def test_moving_frame_zero_env_straight(zero_env):
    s = BackwardSolver(zero_env, 0.0, 0, 8, None, mode="point", start_x=0.0, drift=0.3)
    path, _, _ = s.grid_path(8, 2.4)
    assert np.max(np.abs(path.positions - 0.3 * np.arange(9))) <= 1e-12


def test_ordering_of_traces():
    for s in range(10):
        env = make_environment(100 + s)
        solver = BackwardSolver(env, 0.0, -32, 0, 0.0)
        xs = [-1.0, -0.25, 0.5, 1.5]
        paths = [solver.trace(0, x).path for x in xs]
        for p, q in zip(paths, paths[1:]):
            assert np.all(p.positions <= q.positions + 1e-9)


def test_crossing_check_examples():
    p = Path(0, [0.0, 1.0, 2.0])
    assert crossing_check(p, p).coincide
    q = Path(0, [1.0, 2.0, 3.0])
    r = crossing_check(p, q)
    assert r.ordered and not r.crossings
    x = crossing_check(Path(0, [0, 1, 0, 1]), Path(0, [0.5, 0.5, 0.5, 0.5]))
    assert x.crossings == [2]


def test_straightness_examples():
    cone = ConeSpec(10, 5.0, eta=0.1)
    line = Path(1, 0.5 * np.arange(1, 11))
    r = straightness_check(line, cone)
    assert r["inside"] and r["worst_violation"] <= 0
    other = Path(1, 0.7 * np.arange(1, 11))
    r = straightness_check(other, cone)
    # |0.7 - 0.5| > 0.1 from the first time on
    assert not r["inside"] and r["first_outside"] == 1
    with pytest.raises(ValueError):
        ConeSpec(0, 1.0, eta=0.1)


def test_width_examples():
    p = Path(0, np.zeros(6))
    ks, W = width_Wk(p, p)
    assert np.all(W == 0)
    g = 0.25
    ks, W = width_Wk(p, Path(0, np.full(6, g)))
    assert np.allclose(W, 3 * g)
    # direct summation oracle
    q = Path(0, [0.1, 0.4, 0.2, 0.9, 0.3, 0.5])
    ks, W = width_Wk(p, q)
    ref = [sum(q.positions[k - i] for i in range(3)) for k in range(2, 6)]
    assert np.allclose(W, ref)


def test_pairing_times_examples():
    p = Path(0, np.zeros(10))
    assert pairing_times(p, p, 9) == list(range(9, 1, -1))
    g = 0.05
    q = Path(0, np.full(10, g))
    expect = [k for k in range(9, 1, -1) if k == 9 or 3 * g < 1.0 / (9 - k)]
    assert pairing_times(p, q, 9) == expect


def test_domain_policy_grid_covers_cone():
    pol = DomainPolicy(h=2.0**-4, r_width=2.0, margin=3.0)
    g = pol.grid(1.0, 10, anchor=0.5)
    assert g.x_min <= 1.0 - 23.0 and g.x_max >= 1.0 + 23.0
    assert ((g.x_min - 0.5) / g.h) == math.floor((g.x_min - 0.5) / g.h)


def test_refine_honours_p(rand_env):
    x = np.cumsum(np.random.default_rng(1).normal(0, 0.3, 8))
    for p in (0.0, 0.5, 1.0):
        tr = refine(rand_env, Path(0, x), ActionParams(p))
        assert tr.action == pytest.approx(total_action(rand_env, tr.path, ActionParams(p)), abs=1e-12)
    assert el_residual(rand_env, tr.path) <= 1e-8
