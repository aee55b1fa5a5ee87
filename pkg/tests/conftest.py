import numpy as np
import pytest

from vsiharm.params import default_health, default_params, operating_point


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def health():
    return default_health()


@pytest.fixture(scope="session")
def op(params):
    return operating_point(params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
