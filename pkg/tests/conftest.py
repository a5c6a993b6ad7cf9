import numpy as np
import pytest

from rcdsgd.dataset import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_ds():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return Dataset(np.arange(4), np.array([0, 1, 0, 1]), X, 2)
