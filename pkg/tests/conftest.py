"""
Shared fixtures: small periodic grids and a few reduced geometries.
"""

import numpy as np
import pytest

from models.geometry import FiberBlock
from services.geometry import flat_geometry, make_geometry, make_grid, profile_family


@pytest.fixture
def grid():
    return make_grid(128)


@pytest.fixture
def flat3(grid):
    """Flat T^3."""
    return flat_geometry(grid, 3)


@pytest.fixture
def flat4(grid):
    return flat_geometry(grid, 4)


@pytest.fixture
def warped(grid):
    """Circle block with profile exp(0.3 cos x) times a unit round S^2, n = 4."""
    ones = np.ones(grid.num_points)
    blocks = [
        FiberBlock(profile=profile_family(grid, "cosine_exp", amplitude=0.3), dim=1, curvature=0),
        FiberBlock(profile=ones, dim=2, curvature=1),
    ]
    return make_geometry(grid, ones, blocks)


@pytest.fixture
def round_product(grid):
    """S^1 x S^2 with constant profiles, R = 2 everywhere, n = 3."""
    ones = np.ones(grid.num_points)
    return make_geometry(grid, ones, [FiberBlock(profile=ones, dim=2, curvature=1)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
