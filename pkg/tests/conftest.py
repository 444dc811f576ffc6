import numpy as np
import pytest

from stagles.grid import ScalarField, VectorField, make_grid


@pytest.fixture
def grid2d():
    return make_grid(2, (16, 16), 1.0)


@pytest.fixture
def grid3d():
    return make_grid(3, (8, 8, 8), 1.0)


def random_vector(grid, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return VectorField(grid, tuple(scale * rng.standard_normal(grid.N) for _ in range(grid.d)))


def random_scalar(grid, seed=0):
    rng = np.random.default_rng(seed)
    return ScalarField(grid, rng.standard_normal(grid.N))
