import numpy as np
import pytest

from fpguide.model import CallablePredictor, ConditionalGMM, GMMPredictor
from fpguide.schedule import build_linear_beta_schedule, scaled_linear_schedule


def two_component(var=0.5):
    """Default 1-D mixture: means -2/+2, equal weights, hard conditions."""
    return ConditionalGMM(
        [0.5, 0.5], [[-2.0], [2.0]], [var, var],
        {"c0": [1.0, 0.0], "c1": [0.0, 1.0], "same": [0.5, 0.5]},
    )


def gaussian_pair():
    """Unconditional N(0, 1); condition ``c`` selects N(1, 0.5)."""
    return ConditionalGMM([0.0, 1.0], [[1.0], [0.0]], [0.5, 1.0], {"c": [1.0, 0.0]})


def standard_normal():
    return ConditionalGMM([1.0], [[0.0]], [1.0], {"same": [1.0]})


@pytest.fixture
def sched50():
    return scaled_linear_schedule(50)


@pytest.fixture
def sched100():
    return scaled_linear_schedule(100)


@pytest.fixture
def ddpm1000():
    return build_linear_beta_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def mix_pred(sched50):
    return GMMPredictor(two_component(), sched50)


@pytest.fixture
def mix_pred100(sched100):
    return GMMPredictor(two_component(), sched100)


@pytest.fixture
def normal_pred(sched50):
    return GMMPredictor(standard_normal(), sched50)


def zero_predictor(s, d=1):
    return CallablePredictor(lambda x, t, c: 0.0, s, d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
