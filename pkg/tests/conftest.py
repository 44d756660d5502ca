import numpy as np
import pytest

from mmfg.example6 import ExampleParams, embedded_model
from mmfg.model import random_model
from mmfg.numerics import TimeGrid
from mmfg.riccati import solve


@pytest.fixture(scope="session")
def example_params():
    return ExampleParams(a=1.0, b=1.0, c=1.0, q=1.0)


@pytest.fixture(scope="session")
def example_solution(example_params):
    return solve(embedded_model(example_params), TimeGrid(1.0, 100))


@pytest.fixture(scope="session")
def random_solution():
    m = random_model(np.random.default_rng(5), d0=1, d=2)
    return solve(m, TimeGrid(1.0, 100))


def random_models(n=5, seed=2024):
    """Well-conditioned models alternating (d0, d) = (1, 1) and (1, 2)."""
    rng = np.random.default_rng(seed)
    return [random_model(rng, 1, 1 + (i % 2)) for i in range(n)]
