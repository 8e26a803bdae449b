import numpy as np
import pytest
from hypothesis import given, strategies as st

from kickwave.action import (ActionParams, DegeneratePath, Path, action_gradient, el_residual, el_step,
                             kinetic_action, max_excursion, potential_action, sigma_statistic,
                             total_action)
from tests.conftest import single_bump


@pytest.mark.parametrize("pos,expect", [((0, 1), 0.5), ((0, 0, 0), 0.0), ((0, 1, 3), 2.5)])
def test_kinetic_examples(pos, expect):
    assert kinetic_action(Path(0, pos)) == expect


def test_degenerate_path():
    with pytest.raises(DegeneratePath, match="degenerate path"):
        kinetic_action(Path(0, [1.0]))
    with pytest.raises(DegeneratePath):
        potential_action(None, Path(0, [1.0]))


def test_potential_zero_env(zero_env):
    assert potential_action(zero_env, Path(3, [0.1, 0.7, 2.0])) == 0.0


def test_potential_p1_two_step(rand_env):
    path = Path(2, [0.3, -0.4])
    F0, F1 = rand_env.potential(2, 0.3), rand_env.potential(3, -0.4)
    assert potential_action(rand_env, path, ActionParams(1.0)) == F0
    assert potential_action(rand_env, path, ActionParams(0.0)) == F1
    # p = 1 with both endpoints counted would be F0 + F1 for a path of the form (a, b, c) minus the end
    longer = Path(2, [0.3, -0.4, 0.1])
    assert potential_action(rand_env, longer) == pytest.approx(F0 + F1, abs=1e-15)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=10), st.integers(-3, 3))
def test_p_difference_is_endpoint_difference(pos, n0):
    from kickwave.environment import make_environment
    env = make_environment(7)
    path = Path(n0, pos)
    d = potential_action(env, path, ActionParams(0.0)) - potential_action(env, path, ActionParams(1.0))
    expect = env.potential(path.end_time, pos[-1]) - env.potential(n0, pos[0])
    assert d == pytest.approx(expect, abs=1e-12)


def test_total_action_examples(zero_env):
    assert total_action(zero_env, Path(0, [0.0, 1.0]), W=lambda y: 0.0) == 0.5
    # W(x) = x, one step from 2 to 2
    assert total_action(zero_env, Path(0, [2.0, 2.0]), W=lambda y: y) == 2.0


@given(st.lists(st.floats(-4, 4), min_size=2, max_size=8), st.floats(0, 1))
def test_total_action_termwise_oracle(pos, p):
    from kickwave.environment import make_environment
    env = make_environment(5)
    path = Path(0, pos)
    F = [env.potential(k, x) for k, x in enumerate(pos)]
    ref = 0.1 * pos[0]
    for k in range(len(pos) - 1):
        ref += 0.5 * (pos[k + 1] - pos[k]) ** 2
    ref += p * F[0] + sum(F[1:-1]) + (1 - p) * F[-1]
    got = total_action(env, path, ActionParams(p), W=lambda y: 0.1 * y)
    assert got == pytest.approx(ref, abs=1e-12)


def test_el_step_zero_force(zero_env):
    assert el_step(zero_env, 1, 0.0, 1.0) == 2.0


def test_el_step_single_bump_by_hand():
    env = single_bump(0.0, 1.0, 1.0, tau=1)
    # phi'(y) = -4 y (1 - y^2); at y = 0.5: -1.5
    assert el_step(env, 1, 0.0, 0.5) == pytest.approx(2 * 0.5 - 0.0 - 1.5, abs=1e-15)


def test_el_residual_line_and_perturbation(zero_env):
    line = Path(0, np.arange(6) * 0.75)
    assert el_residual(zero_env, line) == 0.0
    eps = 1e-3
    bent = line.positions.copy()
    bent[2] += eps
    assert el_residual(zero_env, Path(0, bent)) >= eps


def test_gradient_matches_finite_differences(rand_env):
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, 7)
    g, _, _ = action_gradient(rand_env, Path(0, x))
    eps = 1e-6
    for k in range(1, 6):
        xp, xm = x.copy(), x.copy()
        xp[k] += eps
        xm[k] -= eps
        fd = (total_action(rand_env, Path(0, xp)) - total_action(rand_env, Path(0, xm))) / (2 * eps)
        assert g[k - 1] == pytest.approx(fd, abs=1e-5)


def test_sigma_examples():
    assert sigma_statistic(Path(0, [0, 0, 0])) == 2
    assert sigma_statistic(Path(0, [0, 2.5])) == 3


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
def test_sigma_lower_bound(pos):
    assert sigma_statistic(Path(0, pos)) >= len(pos) - 1


def test_excursion():
    assert max_excursion(Path(0, [0.0, 0.0, 0.0])) == 0.0
    assert max_excursion(Path(0, [1.0, -1.5, 2.0])) == 2.5


def test_path_helpers():
    p = Path(3, [1.0, 2.0, 4.0])
    assert p.end_time == 5 and p.at(4) == 2.0
    assert list(p.segment(4, 5).positions) == [2.0, 4.0]
    with pytest.raises(ValueError):
        p.segment(2, 4)
    with pytest.raises(ValueError):
        ActionParams(1.5)
