import numpy as np
import pytest
import torch

from gaeor.data import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def tiny_bench():
    """4 classes x (2 train, 2 test) at 32px."""
    return generate_synthetic(4, 2, 2, 32, seed=3)


@pytest.fixture(scope="session")
def small_bench():
    """10 classes x (3 train, 3 test) at 64px."""
    return generate_synthetic(10, 3, 3, 64, seed=7)
