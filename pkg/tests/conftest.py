import numpy as np
import pytest

from speech2pose.skeleton import Camera, default_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton(0)


@pytest.fixture(scope="session")
def camera():
    return Camera()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
