import numpy as np
import pytest

from fedcls import ckks


@pytest.fixture(scope="session")
def desk_keys():
    return ckks.keygen(ckks.DESK_PARAMS, seed=0)


@pytest.fixture(scope="session")
def paper_keys():
    return ckks.keygen(ckks.PAPER_PARAMS, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
