import numpy as np
import pytest

from hlayer import group_core as gc
from hlayer import kernels as kn


@pytest.fixture(scope="session")
def h1():
    return kn.calibrated(gc.make_prototype("heisenberg", 1))


@pytest.fixture(scope="session")
def quat():
    return kn.calibrated(gc.make_prototype("quaternionic"))


@pytest.fixture(scope="session")
def h2():
    return kn.calibrated(gc.make_prototype("heisenberg", 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
