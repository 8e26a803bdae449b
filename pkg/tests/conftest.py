import numpy as np
import pytest
from hypothesis import settings

from kickwave.environment import Environment, EnvironmentConfig, KickPoint

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def zero_env():
    return Environment.zero()


@pytest.fixture
def rand_env():
    return Environment(EnvironmentConfig(master_seed=11))


def single_bump(eta=0.0, xi=1.0, kappa=1.0, tau=0):
    return Environment.from_points([KickPoint(tau, eta, xi, kappa)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
