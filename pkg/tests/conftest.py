import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from netforge.graph import WeightList
from netforge.utility import Alky

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def alky():
    return Alky()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def path_graph(n=3, w=0.5):
    return WeightList.from_edges(n, [(k, k + 1) for k in range(n - 1)], w)


def random_feasible_alpha(rng, n, density, lo=0.05, hi=0.9):
    """Random weight list without isolated agents (rejection sampled)."""
    while True:
        present = rng.random(n * (n - 1) // 2) < density
        vals = np.where(present, rng.uniform(lo, hi, present.size), 0.0)
        a = WeightList(vals, n)
        if not a.isolated().size:
            return a
