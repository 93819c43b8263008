import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stripwalk import catalog

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def scalar():
    return catalog.homogeneous_scalar()


@pytest.fixture
def coupled():
    return catalog.coupled_d2()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
