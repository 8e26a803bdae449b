import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kickwave.action import ActionParams, max_excursion
from kickwave.environment import Environment, EnvironmentConfig, make_environment
from kickwave.minimizers import DomainPolicy
from kickwave.shape import (ShapeEstimate, concentration_tail, estimate_alpha, excursion_tail,
                            p_independence, point_action, quadratic_law_check, sample_grid,
                            shape_from_samples, shear_action_identity, solve_point_to_point)

ZERO = EnvironmentConfig(intensity=0.0)
POL = DomainPolicy(h=2.0**-6)


@pytest.mark.parametrize("v", [0.0, 0.5, -1.0])
def test_zero_env_point_action(zero_env, v):
    n = 16
    assert point_action(zero_env, n, v) == pytest.approx(n * v * v / 2, abs=1e-12)


def test_zero_env_alpha_exact():
    s = sample_grid(ZERO, range(3), [0.0, 0.5, 1.0], 16, policy=POL)
    for smp in s:
        assert np.all(smp.values / 16 == smp.v**2 / 2)
    ests = [shape_from_samples(x) for x in s]
    rep = quadratic_law_check(ests, POL.h)
    assert rep.passed and all(r["residual"] == 0 for r in rep.rows)


def test_zero_env_excursion_zero(zero_env):
    sol = solve_point_to_point(zero_env, (0, 0.0), (32, 0.0))
    assert max_excursion(sol.trace.path) == 0.0


def _brute(env, n, x0, x1, h, lo, N, p):
    """Exhaustive min over grid paths with fixed ends (interior nodes lo + j h)."""
    xs = lo + np.arange(N) * h
    F = [env.grid_values(t, xs, h)[0] for t in range(n + 1)]
    best = np.inf
    for mid in itertools.product(range(N), repeat=n - 1):
        pos = [x0] + [xs[j] for j in mid] + [x1]
        c = 0.5 * sum((b - a) ** 2 for a, b in zip(pos, pos[1:]))
        c += p * env.potential(0, x0) + sum(F[t][j] for t, j in zip(range(1, n), mid))
        c += (1 - p) * env.potential(n, x1)
        best = min(best, c)
    return best


@pytest.mark.parametrize("seed", range(4))
def test_grid_value_matches_enumeration(seed):
    env = Environment(EnvironmentConfig(master_seed=seed, intensity=2.0))
    h = 0.25
    pol = DomainPolicy(h=h, r_width=0.5, margin=0.75)
    n = 3
    sol = solve_point_to_point(env, (0, 0.0), (n, 0.0), ActionParams(1.0), pol, refine=False)
    # the solver's grid: anchored at 0, half-width 0.5*3 + 0.75
    ref = _brute(env, n, 0.0, 0.0, h, -2.25, 19, 1.0)
    assert sol.grid_value == pytest.approx(ref, abs=1e-12)
    assert sol.value <= sol.grid_value + 1e-12


def test_refined_not_above_grid_value(rand_env):
    sol = solve_point_to_point(rand_env, (0, 0.0), (32, 8.0))
    assert sol.trace.refined
    assert sol.value <= sol.grid_value + 1e-12
    assert sol.trace.el_res <= 1e-8


@settings(max_examples=6)
@given(st.integers(0, 10**6), st.floats(-1.0, 1.0), st.sampled_from([16, 48]))
def test_band_matches_full_width(seed, v, n):
    env = Environment(EnvironmentConfig(master_seed=seed))
    band = solve_point_to_point(env, (0, 0.0), (n, v * n), policy=POL)
    # r_width below the first band makes the schedule go straight to the full grid
    full = solve_point_to_point(env, (0, 0.0), (n, v * n), policy=DomainPolicy(POL.h, 0.5, 8.0 + 4 * n))
    # same lattice up to the rounding of x_min + i h
    assert band.grid_value == pytest.approx(full.grid_value, rel=1e-12, abs=1e-12)
    assert band.value == pytest.approx(full.value, rel=1e-12, abs=1e-12)
    assert not band.flags


def test_zero_margin_band_still_matches_full_width():
    # no margin: the first band is tight, the schedule widens where needed
    env = Environment(EnvironmentConfig(master_seed=3, intensity=4.0))
    band = solve_point_to_point(env, (0, 0.0), (32, 4.0), policy=DomainPolicy(POL.h, 4.0, 0.0))
    full = solve_point_to_point(env, (0, 0.0), (32, 4.0), policy=DomainPolicy(POL.h, 0.5, 144.0))
    assert "boundary_contact" not in band.flags
    assert band.value == pytest.approx(full.value, rel=1e-12, abs=1e-12)


def test_extra_ends_are_consistent(rand_env):
    sols = solve_point_to_point(rand_env, (0, 0.0), (16, 4.0), extra_ends=[(8, 2.0)])
    assert len(sols) == 2
    alone = solve_point_to_point(rand_env, (0, 0.0), (16, 4.0))
    assert sols[0].value == alone.value


def test_shear_identity_trivial_cases(rand_env, zero_env):
    lhs, rhs = shear_action_identity(rand_env, 16, 0.0, 2.0, 0.0, 0.0)
    assert lhs == rhs
    for a, w in ((0.3, 0.7), (-1.1, -0.45)):
        lhs, rhs = shear_action_identity(zero_env, 16, 0.25, 3.0, a, w)
        assert lhs == pytest.approx(rhs, abs=1e-12)


@settings(max_examples=6)
@given(st.floats(-2, 2), st.floats(-0.5, 0.5), st.integers(0, 1000))
def test_shear_identity_random(a, w, seed):
    env = make_environment(seed)
    lhs, rhs = shear_action_identity(env, 32, 0.1, -1.3, a, w)
    assert abs(lhs - rhs) <= 1e-6


def test_p_independence_zero_env():
    e0 = estimate_alpha(ZERO, range(3), 0.0, 8, ActionParams(0.0), POL)
    e1 = estimate_alpha(ZERO, range(3), 0.0, 8, ActionParams(1.0), POL)
    r = p_independence(e0, e1)
    assert r["diff"] == 0 and r["pass"]


def test_subadditivity_trend():
    s = sample_grid(EnvironmentConfig(), range(12), [0.0], 32, policy=POL, diag_times=(8, 16))[0]
    e = shape_from_samples(s)
    m16, se16 = e.subadditive[16]
    assert e.mean <= m16 + 3 * max(se16, e.stderr)


def test_shape_estimate_requires_two_replicas():
    with pytest.raises(ValueError):
        ShapeEstimate(0.0, 8, 1, 0.0, 0.0, np.zeros(1))


def test_quadratic_check_needs_v0():
    e = ShapeEstimate(0.5, 8, 2, 0.125, 0.0, np.zeros(2))
    with pytest.raises(ValueError):
        quadratic_law_check([e], 0.01)


def test_tail_curves_zero_env():
    vals = np.zeros(50)
    t = concentration_tail(vals, 256, u_grid=[0.1, 0.5], min_count=0, boot=10)
    assert np.all(t.p_hat == 0)
    t = excursion_tail(np.zeros(50), 256, u_grid=[0.1], min_count=0, boot=10)
    assert np.all(t.p_hat == 0)


@given(st.lists(st.floats(-10, 10), min_size=20, max_size=60))
def test_tail_nonincreasing(vals):
    t = concentration_tail(np.array(vals), 64, min_count=0, boot=5)
    assert np.all(np.diff(t.p_hat) <= 0)


def test_tail_fit_detects_exponential_decay():
    rng = np.random.default_rng(0)
    x = rng.exponential(1.0, 2000)
    n = 256
    t = excursion_tail(x, n, boot=100)
    assert t.slope < 0 and t.negative


def test_sample_grid_order_independent_of_workers():
    a = sample_grid(EnvironmentConfig(), range(3), [0.0, 0.5], 8, policy=POL, workers=1)
    b = sample_grid(EnvironmentConfig(), range(3), [0.0, 0.5], 8, policy=POL, workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values) and x.seeds == y.seeds
