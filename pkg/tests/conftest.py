import numpy as np
import pytest

from fracpert.geometry import Ball
from fracpert.special import StableParams


@pytest.fixture
def unit_ball():
    return Ball([0.0, 0.0], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cauchy():
    return StableParams(2, 1.0, 0.5)


@pytest.fixture
def params_main():
    return StableParams(2, 1.5, 0.5)
