import pytest

from motorlab import D1_PARAMS, DEFAULT_GAINS
from motorlab.plant import MotorParams
from motorlab.rollout import SimConfig

from helpers import ZeroController


@pytest.fixture
def params() -> MotorParams:
    return D1_PARAMS


@pytest.fixture
def gains():
    return DEFAULT_GAINS


@pytest.fixture
def short_sim() -> SimConfig:
    return SimConfig(dt=2e-4, n_steps=250)


@pytest.fixture
def zero_controller():
    return ZeroController()
