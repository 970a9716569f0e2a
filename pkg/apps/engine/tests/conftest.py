import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import the engine package
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from mixturecraft.densities import builtin_density


@pytest.fixture
def std_normal():
    return builtin_density("gaussian", [0.0, 1.0])


@pytest.fixture
def std_laplace():
    return builtin_density("laplace", [0.0, 1.0])


@pytest.fixture
def unit_triangle():
    return builtin_density("triangular", [-1.0, 0.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
