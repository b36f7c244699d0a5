import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from helpers import toy_problem  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy():
    """The n = 4, d = 2 latent logistic instance: (dataset, params, oracle)."""
    return toy_problem()


@pytest.fixture(scope="session")
def small():
    """n = 50, d = 5 synthetic instance with sigma2 = 0.1, tau = 1."""
    return toy_problem(n=50, d=5, seed=3)
