import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from attnqp import QpInstance, kernels

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def u_toy():
    return QpInstance("U", [[2.0, 0.0], [0.0, 2.0]], [-2.0, -2.0])


@pytest.fixture
def lc_toy():
    return QpInstance("LC", np.eye(2), [-2.0, -2.0], [[1.0, 1.0]], [2.0])


@pytest.fixture
def r_toy():
    return QpInstance("R", np.eye(2), [-2.0, 0.0], l1_weight=0.5)


@pytest.fixture
def c_toy():
    return QpInstance("C", np.eye(2), [-2.0, -2.0], l1_budget=1.0)


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    return kernels.backends()[request.param]
