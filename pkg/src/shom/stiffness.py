"""Constitutive operators acting on stored tensor components.

A stiffness value is a symmetric positive-definite matrix on the component
basis of the chosen physics: a d x d matrix for conductivity, a matrix on
the orthonormal symmetric basis (with major symmetry built in) for
elasticity.  A ``StiffnessField`` is either uniform (one matrix, used for
the reference medium) or per-cell.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid, Physics, component_count, identity_components


class StiffnessError(ValueError):
    """Raised for non-SPD or inconsistent stiffness data."""


def isotropic_conductivity_matrix(dim: int, modulus: float) -> np.ndarray:
    """Conductivity matrix ``modulus * I`` acting on flux/gradient vectors."""
    if modulus <= 0:
        raise StiffnessError(f"conductivity modulus must be positive, got {modulus}")
    return modulus * np.eye(dim)


def isotropic_elasticity_matrix(dim: int, bulk: float, shear: float) -> np.ndarray:
    """Isotropic elasticity on the symmetric basis from a bulk/shear pair.

    Uses the d-dimensional bulk modulus, i.e. the tensor maps a strain e to
    ``lam * tr(e) I + 2 mu e`` with ``lam = bulk - 2*shear/d``.
    """
    if shear <= 0 or bulk <= 0:
        raise StiffnessError(f"bulk and shear moduli must be positive, got {bulk}, {shear}")
    m = component_count(Physics.ELASTICITY, dim)
    lam = bulk - 2.0 * shear / dim
    ident = identity_components(dim)
    return 2.0 * shear * np.eye(m) + lam * np.outer(ident, ident)


class StiffnessField:
    """Uniform or per-cell SPD operator on tensor components.

    Parameters
    ----------
    physics : Physics
    dim : int
        Spatial dimension.
    values : ndarray
        Either (m, m) for a uniform operator or (*grid.dims, m, m) per cell.
    grid : Grid, optional
        Required for per-cell values.
    """

    def __init__(self, physics, dim, values, grid=None):
        physics = Physics(physics)
        values = np.asarray(values, dtype=float)
        m = component_count(physics, dim)
        if values.shape[-2:] != (m, m):
            raise StiffnessError(
                f"stiffness blocks must be {m}x{m} for {physics.value} in {dim}D, "
                f"got {values.shape[-2:]}"
            )
        if values.ndim == 2:
            if grid is not None and not isinstance(grid, Grid):
                raise StiffnessError("grid must be a Grid instance")
        else:
            if grid is None or values.shape[:-2] != grid.dims:
                raise StiffnessError(
                    f"per-cell stiffness shape {values.shape[:-2]} does not match grid"
                )
        asym = np.abs(values - np.swapaxes(values, -1, -2)).max()
        if asym > 1e-12 * max(1.0, np.abs(values).max()):
            raise StiffnessError("stiffness blocks must be symmetric")
        self.physics = physics
        self.dim = dim
        self.values = values
        self.grid = grid
        self._check_spd()

    # -- constructors -------------------------------------------------------

    @classmethod
    def uniform(cls, physics, dim, matrix):
        return cls(physics, dim, matrix)

    @classmethod
    def isotropic_conductivity(cls, dim, modulus):
        return cls(Physics.CONDUCTIVITY, dim, isotropic_conductivity_matrix(dim, modulus))

    @classmethod
    def isotropic_elasticity(cls, dim, bulk, shear):
        return cls(Physics.ELASTICITY, dim, isotropic_elasticity_matrix(dim, bulk, shear))

    # -- queries ------------------------------------------------------------

    @property
    def is_uniform(self) -> bool:
        return self.values.ndim == 2

    @property
    def ncomp(self) -> int:
        return self.values.shape[-1]

    @property
    def matrix(self) -> np.ndarray:
        if not self.is_uniform:
            raise StiffnessError("matrix is only defined for a uniform stiffness")
        return self.values

    def _check_spd(self):
        eigs = np.linalg.eigvalsh(self.values)
        if self.is_uniform:
            if eigs[0] <= 0:
                raise StiffnessError(
                    f"stiffness is not positive definite (min eigenvalue {eigs[0]:.3e})"
                )
        else:
            mins = eigs[..., 0]
            if mins.min() <= 0:
                cell = np.unravel_index(int(np.argmin(mins)), self.grid.dims)
                raise StiffnessError(
                    f"stiffness is singular or indefinite at cell {cell} "
                    f"(min eigenvalue {mins.min():.3e})"
                )

    def eig_range(self):
        """(min, max) eigenvalue over all cells."""
        eigs = np.linalg.eigvalsh(self.values)
        return float(eigs.min()), float(eigs.max())

    # -- derived matrices (uniform only) -------------------------------------

    @property
    def inverse_matrix(self) -> np.ndarray:
        if not hasattr(self, "_inv"):
            self._inv = np.linalg.inv(self.matrix)
        return self._inv

    def _eig(self):
        if not hasattr(self, "_eigh"):
            self._eigh = np.linalg.eigh(self.matrix)
        return self._eigh

    @property
    def sqrt_matrix(self) -> np.ndarray:
        w, v = self._eig()
        return (v * np.sqrt(w)) @ v.T

    @property
    def inverse_sqrt_matrix(self) -> np.ndarray:
        w, v = self._eig()
        return (v / np.sqrt(w)) @ v.T

    # -- application ---------------------------------------------------------

    def apply(self, comps: np.ndarray) -> np.ndarray:
        """Apply the operator cell-wise to a (*dims, m) component array."""
        if self.is_uniform:
            return comps @ self.matrix.T
        return np.einsum("...ij,...j->...i", self.values, comps)

    def apply_inverse(self, comps: np.ndarray) -> np.ndarray:
        if self.is_uniform:
            return comps @ self.inverse_matrix.T
        return np.linalg.solve(self.values, comps[..., None])[..., 0]
