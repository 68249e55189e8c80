import numpy as np
import pytest

from disccore import FunctionFamily


@pytest.fixture
def gauss2():
    return FunctionFamily("gaussian_kernel", 2, 1.0)


@pytest.fixture
def quant():
    return FunctionFamily("quantile_indicator", 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
