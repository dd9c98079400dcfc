import numpy as np
import pytest

from shom import Grid, Physics, StiffnessField, TensorField
from shom.grid import component_count


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_field(grid, physics, rng):
    m = component_count(Physics(physics), grid.dim)
    return TensorField(grid, physics, rng.standard_normal(grid.dims + (m,)))


def conductivity_reference(dim, modulus=2.0):
    return StiffnessField.isotropic_conductivity(dim, modulus)


def elasticity_reference(dim, bulk=3.0, shear=1.2):
    return StiffnessField.isotropic_elasticity(dim, bulk, shear)


@pytest.fixture
def grid16():
    return Grid((16, 16))


@pytest.fixture
def grid8():
    return Grid((8, 8))
