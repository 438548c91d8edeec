import numpy as np
import pytest

from icheetah import ckks
from icheetah.params import default_params, toy_insecure_params


@pytest.fixture(scope="session")
def toy_params():
    return toy_insecure_params()


@pytest.fixture(scope="session")
def toy_keys(toy_params):
    return ckks.keygen(toy_params, seed=1234)


@pytest.fixture(scope="session")
def big_params():
    return default_params()


@pytest.fixture(scope="session")
def big_keys(big_params):
    return ckks.keygen(big_params, seed=1234)


@pytest.fixture()
def rng():
    return np.random.default_rng(0xC0FFEE)
