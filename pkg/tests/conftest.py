import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tagcl.graph import from_edges

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def path3():
    return from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def k2():
    return from_edges(2, [(0, 1)])


@pytest.fixture
def star():
    # hub 0 with four leaves
    return from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)])


def random_symmetric_adjacency(rng, n, p=0.4):
    a = np.triu(rng.random((n, n)) < p, k=1).astype(float)
    return a + a.T
