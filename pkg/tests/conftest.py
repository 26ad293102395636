import numpy as np
import pytest

from slotnet.approx import compose_sign
from slotnet.bootpipe import BootParams, build_mod_reducer
from slotnet.resnet import random_weights


@pytest.fixture(scope="session")
def sign13():
    return compose_sign(13)


@pytest.fixture(scope="session")
def default_reducer():
    return build_mod_reducer(BootParams())


@pytest.fixture(scope="session")
def small_weights():
    return random_weights(seed=1)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
