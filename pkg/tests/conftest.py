import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stackgrid.gamecore import FlexUserSet
from stackgrid.synth import random_users

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_tilde(rng, n, T, users=None):
    """Positive adjusted supply/load with a random fleet."""
    users = users or random_users(rng, n, T)
    scale = users.g_N / T
    wt = rng.uniform(0.3, 2.0, T) * scale
    rt = rng.uniform(-1.0, 2.0, T) * scale
    return wt, rt, users


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_users():
    return FlexUserSet(np.array([1.0, 2.0, 3.0]), np.array([0.6, 1.0, 1.5]))
