import numpy as np
import pytest

from mlfpn import NetworkConfig, build_model
from mlfpn.pipeline import forward

from helpers import small_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def image320():
    return np.random.default_rng(7).uniform(-1, 1, (1, 3, 320, 320)).astype(np.float32)


@pytest.fixture(scope="session")
def small_model():
    return build_model(small_config())


@pytest.fixture(scope="session")
def default_model():
    return build_model(NetworkConfig())


@pytest.fixture(scope="session")
def default_forward(default_model, image320):
    return forward(image320, default_model)
