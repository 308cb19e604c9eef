import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_psd(rng, n, rank=None):
    g = crandn(rng, n, rank or n)
    r = g @ g.conj().T
    return r / np.trace(r).real


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
