import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gnep_inverse.game import CostParameterization, GameInstance
from gnep_inverse.network import Network

settings.register_profile(
    "artifact",
    deadline=None,
    max_examples=30,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("artifact")


@pytest.fixture
def parallel_net():
    """Two nodes joined by two parallel arcs 1 -> 2."""
    return Network.from_pairs(2, [(1, 2), (1, 2)], name="parallel")


def parallel_instance(net, players=1, capacity=2.0):
    return GameInstance(net, players, capacity, (1, 2))


def shared(c_int, c_base, players):
    return CostParameterization.shared(np.asarray(c_int, float), np.asarray(c_base, float), players)
