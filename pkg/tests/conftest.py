import numpy as np
import pytest

from eqsearch import bench
from eqsearch.data import Dataset


@pytest.fixture(scope="session")
def osc1_splits():
    splits, _ = bench.generate_benchmark("osc1", seed=1, samples=500)
    return splits


@pytest.fixture(scope="session")
def osc2_splits():
    splits, _ = bench.generate_benchmark("osc2", seed=1, samples=500)
    return splits


@pytest.fixture
def line_data():
    """y = 2x + 1 on x = 0..9."""
    x = np.arange(10, dtype=float)
    return Dataset(("x",), x[:, None], 2 * x + 1)
