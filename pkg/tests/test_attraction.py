import numpy as np
import pytest
from hypothesis import given, strategies as st

from kickwave.attraction import (InitialDataSpec, NotMonotone, SlopeData, classify_initial,
                                 convergence_equivalence_check, equivalence_families, metric_d,
                                 monotone_map, pullback_experiment, random_profile,
                                 summarize_pullback)
from kickwave.environment import EnvironmentConfig
from kickwave.hopf_lax import GridProfile, GridSpec
from kickwave.minimizers import DomainPolicy

G = GridSpec(-20.0, 2.0**-4, 641)


def _const(c, grid=G):
    return GridProfile(grid, 0, np.full(grid.count, float(c)), "velocity")


# classification

def test_zero_is_fan():
    assert classify_initial(InitialDataSpec("zero")).kind == "fan_v0"


@pytest.mark.parametrize("v", [0.25, 1.0, 3.0])
def test_positive_linear_left_wins(v):
    c = classify_initial(InitialDataSpec("linear", {"v": v}))
    assert (c.kind, c.v) == ("left_wins", v)


@pytest.mark.parametrize("v", [-0.25, -2.0])
def test_negative_linear_right_wins(v):
    c = classify_initial(InitialDataSpec("linear", {"v": v}))
    assert (c.kind, c.v) == ("right_wins", v)


def test_v_shape_is_fan():
    spec = InitialDataSpec("piecewise_linear", {"breaks": [0.0], "slopes": [-1.0, 1.0]})
    assert classify_initial(spec).kind == "fan_v0"


def test_left_wins_needs_right_slope_above_minus_v():
    assert classify_initial(SlopeData.limits(1.0, -0.5)).kind == "left_wins"
    # boundary case v_+ = -v_- is not covered
    assert classify_initial(SlopeData.limits(1.0, -1.0)).kind == "unclassified"


def test_right_wins_needs_left_slope_below_minus_v():
    assert classify_initial(SlopeData.limits(0.5, -1.0)).kind == "right_wins"
    assert classify_initial(SlopeData.limits(1.0, -1.0)).kind == "unclassified"


def test_oscillating_slopes_without_limit():
    s = SlopeData(left_liminf=0.5, left_limsup=2.0, right_liminf=1.0, right_limsup=1.0)
    assert s.left_limit is None
    assert classify_initial(s).kind == "unclassified"


def test_bounded_perturbation_keeps_slope():
    spec = InitialDataSpec("bounded_perturbation", {"v": 0.5, "amplitude": 0.3, "period": 2.0})
    assert classify_initial(spec).kind == "left_wins"
    x = np.linspace(-3, 3, 13)
    assert np.allclose(spec.potential(x), 0.5 * x + 0.3 * np.sin(np.pi * x))


def test_piecewise_potential_values():
    spec = InitialDataSpec("piecewise_linear", {"breaks": [-1.0, 2.0], "slopes": [3.0, 0.0, -1.0]})
    x = np.array([-3.0, -1.0, 0.0, 2.0, 5.0])
    # W(0) = 0 and W' piecewise constant
    assert np.allclose(spec.potential(x), [-6.0, 0.0, 0.0, 0.0, -3.0])


def test_bad_initial_spec_rejected():
    with pytest.raises(ValueError):
        InitialDataSpec("wiggly")
    with pytest.raises(ValueError):
        InitialDataSpec("piecewise_linear", {"breaks": [0.0], "slopes": [1.0]})


# metric

def test_metric_self_distance_zero(rng):
    u = random_profile(rng, G)
    assert metric_d(u, u) == 0.0


@pytest.mark.parametrize("c", [0.1, 0.5, 1.0, 2.5, -0.7])
def test_metric_constant_shift_closed_form(c):
    N_max = 12
    expect = min(abs(c), 1.0) * (1.0 - 2.0**-N_max)
    assert metric_d(_const(0.0), _const(c), N_max) == pytest.approx(expect, abs=1e-12)


def test_metric_rejects_non_monotone():
    u = GridProfile(G, 0, G.x * 2.0, "velocity")  # x - u = -x decreases
    with pytest.raises(NotMonotone):
        monotone_map(u)


def test_metric_is_at_most_one_and_bounded_by_sup():
    a, b = _const(0.0), _const(0.01)
    assert metric_d(a, b, 30) <= 0.01 + 1e-15
    assert metric_d(_const(-50.0), _const(50.0), 30) <= 1.0


@given(st.integers(0, 2**32 - 1))
def test_metric_axioms_on_random_triples(seed):
    rng = np.random.default_rng(seed)
    u, w, z = (random_profile(rng, G) for _ in range(3))
    duw, dwz, duz = metric_d(u, w), metric_d(w, z), metric_d(u, z)
    assert duw == metric_d(w, u)
    assert duw >= 0.0
    assert duz <= duw + dwz + 1e-12


def test_metric_positive_for_distinct_profiles(rng):
    u = random_profile(rng, G)
    w = GridProfile(G, 0, u.values.copy(), "velocity")
    w.values[300] -= 0.01  # keeps x - u nondecreasing
    assert metric_d(u, w) > 0.0


def test_metric_bounded_by_perturbation_size(rng):
    # M' >= 1/2 between jumps, so M^{-1} is 2-Lipschitz and a shift eps of u moves it by <= 2 eps
    inc = rng.uniform(0.5, 2.0, G.count - 1) * G.h
    inc[rng.choice(G.count - 1, 5, replace=False)] += 1.0
    M = G.x_min + np.concatenate([[0.0], np.cumsum(inc)])
    u = GridProfile(G, 0, G.x - M, "velocity")
    for eps in (0.1, 0.01, 0.001):
        assert metric_d(u, GridProfile(G, 0, u.values + eps, "velocity")) <= 2 * eps + 1e-12


# convergence families

def test_families_match_expectations():
    fams = equivalence_families(GridSpec(-4.0, 2.0**-6, 513))
    for name, (seq, lim, expected) in fams.items():
        rep = convergence_equivalence_check(seq, lim)
        assert rep.d_converges == expected, name
        assert rep.consistent, name


def test_oscillating_distance_stays_away_from_zero():
    seq, lim, _ = equivalence_families(GridSpec(-4.0, 2.0**-6, 513))["oscillating_heights"]
    rep = convergence_equivalence_check(seq, lim)
    assert min(rep.d) > 0.4


# pullback

def test_pullback_zero_env_is_exact():
    rows = pullback_experiment(EnvironmentConfig(intensity=0.0), InitialDataSpec("zero"), None,
                               [-4, -8], [0, 1], window=(-2.0, 2.0), ref_horizon=16,
                               policy=DomainPolicy(h=2.0**-5, margin=4.0))
    assert len(rows) == 4
    assert all(r.d == 0.0 and not r.boundary_flag for r in rows)
    s = summarize_pullback(rows)
    assert s["ms"] == [-4, -8] and s["flagged"] == 0


def test_pullback_unclassified_needs_v():
    spec = InitialDataSpec("zero", slopes=SlopeData.limits(1.0, -1.0))
    with pytest.raises(ValueError):
        pullback_experiment(EnvironmentConfig(), spec, None, [-4], [0])
