"""Local material response: phase maps, convex potentials, constitutive error.

Constitutive data is stored per phase with a cell -> phase indirection, which
is what the two-phase benchmarks need and keeps 512^2 grids cheap.  Quadratic
phases carry an SPD matrix on the component basis; the non-linear interface
goes through a convex potential and its Legendre-Fenchel dual.
"""

from __future__ import annotations

import warnings

import numpy as np

from .fields import TensorField
from .grid import Physics, component_count
from .stiffness import StiffnessField


class PhaseTableError(ValueError):
    """Raised for inconsistent phase maps or tables."""


class NonlinearPhaseError(TypeError):
    """Raised when a linear-only operation meets a non-linear phase."""


class QuadraticPotential:
    """Quadratic energy ``w(e) = 1/2 L e : e`` with dual ``1/2 t : L^-1 t``."""

    is_quadratic = True

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        eigs = np.linalg.eigvalsh(matrix)
        if eigs[0] <= 0:
            raise PhaseTableError(
                f"phase stiffness is not SPD (min eigenvalue {eigs[0]:.3e})"
            )
        self.matrix = matrix
        self.inverse = np.linalg.inv(matrix)
        self.eig_min = float(eigs[0])
        self.eig_max = float(eigs[-1])

    @classmethod
    def isotropic(cls, physics, dim, *moduli):
        physics = Physics(physics)
        if physics == Physics.CONDUCTIVITY:
            (modulus,) = moduli
            return cls(StiffnessField.isotropic_conductivity(dim, modulus).matrix)
        bulk, shear = moduli
        return cls(StiffnessField.isotropic_elasticity(dim, bulk, shear).matrix)

    def value(self, e):
        return 0.5 * np.einsum("...i,...i->...", e @ self.matrix, e)

    def grad(self, e):
        return e @ self.matrix

    def dual_value(self, t):
        return 0.5 * np.einsum("...i,...i->...", t @ self.inverse, t)

    def dual_grad(self, t):
        return t @ self.inverse


class PowerLawPotential:
    """Isotropic power-law demonstrator ``w(e) = (k/p) |e|^p`` with p > 2.

    Its dual is ``w*(t) = k^(1-q)/q |t|^q`` with ``q = p/(p-1)``; the gradient
    pair inverts exactly, which the quadratic-equivalence tests rely on.
    """

    is_quadratic = False

    def __init__(self, modulus, exponent):
        if modulus <= 0:
            raise PhaseTableError("power-law modulus must be positive")
        if exponent <= 2:
            raise PhaseTableError("power-law exponent must exceed 2")
        self.modulus = float(modulus)
        self.exponent = float(exponent)
        self.dual_exponent = exponent / (exponent - 1.0)

    def _norm(self, x):
        return np.sqrt(np.einsum("...i,...i->...", x, x))

    def value(self, e):
        return (self.modulus / self.exponent) * self._norm(e) ** self.exponent

    def grad(self, e):
        return self.modulus * self._norm(e)[..., None] ** (self.exponent - 2.0) * e

    def dual_value(self, t):
        q = self.dual_exponent
        return self.modulus ** (1.0 - q) / q * self._norm(t) ** q

    def dual_grad(self, t):
        q = self.dual_exponent
        mag = self._norm(t)
        scale = np.zeros_like(mag)
        np.divide(
            self.modulus ** (1.0 - q) * mag ** (q - 1.0),
            mag,
            out=scale,
            where=mag > 0,
        )
        return scale[..., None] * t


def check_convexity(potential, dim, physics, rng, samples=32, tol=1e-12):
    """Sampled midpoint-convexity and weak-coercivity checks.

    Violations raise warnings rather than errors; the potentials are user
    input and only spot-checked.
    """
    m = component_count(Physics(physics), dim)
    a = rng.standard_normal((samples, m))
    b = rng.standard_normal((samples, m))
    mid = potential.value(0.5 * (a + b))
    avg = 0.5 * (potential.value(a) + potential.value(b))
    if np.any(mid - avg > tol * (1.0 + np.abs(avg))):
        warnings.warn("potential fails sampled midpoint convexity", stacklevel=2)
    gap = np.einsum("...i,...i->...", potential.grad(a) - potential.grad(b), a - b)
    if np.any(gap <= 0):
        warnings.warn("potential fails sampled weak coercivity", stacklevel=2)


class PhaseMap:
    """Cell -> phase indirection plus the per-phase constitutive laws.

    Parameters
    ----------
    grid : Grid
    physics : Physics
    ids : ndarray of int, shape grid.dims
    table : dict mapping phase id to QuadraticPotential or a potential object
    """

    def __init__(self, grid, physics, ids, table):
        physics = Physics(physics)
        ids = np.asarray(ids)
        if ids.shape != grid.dims:
            raise PhaseTableError(f"phase ids shape {ids.shape} does not match grid")
        if not np.issubdtype(ids.dtype, np.integer):
            raise PhaseTableError("phase ids must be integers")
        present = np.unique(ids)
        missing = [int(p) for p in present if int(p) not in table]
        if missing:
            raise PhaseTableError(f"phase ids {missing} missing from the phase table")
        self.grid = grid
        self.physics = physics
        self.ids = ids.astype(np.int64)
        self.table = dict(table)
        self.ncomp = component_count(physics, grid.dim)
        self._masks = {int(p): self.ids == int(p) for p in present}
        self._dense = None

    # -- queries --------------------------------------------------------------

    @property
    def is_quadratic(self) -> bool:
        return all(p.is_quadratic for p in self.table.values())

    def volume_fractions(self) -> dict:
        return {p: float(m.mean()) for p, m in self._masks.items()}

    def quadratic_phases(self) -> dict:
        if not self.is_quadratic:
            raise NonlinearPhaseError(
                "operation needs quadratic phases; use the potential interface"
            )
        return self.table

    def eig_range(self):
        """(min, max) stiffness eigenvalue over quadratic phases present."""
        self.quadratic_phases()
        phases = [self.table[p] for p in self._masks]
        return (
            min(ph.eig_min for ph in phases),
            max(ph.eig_max for ph in phases),
        )

    def _per_phase(self, fn, data):
        out = np.empty_like(data)
        for pid, mask in self._masks.items():
            out[mask] = fn(self.table[pid], data[mask])
        return out

    def _dense_matrix(self) -> np.ndarray:
        if self._dense is None:
            self.quadratic_phases()
            stack = np.zeros(self.grid.dims + (self.ncomp, self.ncomp))
            for pid, mask in self._masks.items():
                stack[mask] = self.table[pid].matrix
            self._dense = stack
        return self._dense

    def _check(self, f: TensorField):
        if f.grid != self.grid or f.physics != self.physics:
            raise PhaseTableError("field does not match the phase map grid/physics")

    # -- linear interface (stiffness application) ------------------------------

    def apply(self, data: np.ndarray) -> np.ndarray:
        """Cell-wise L x on raw component data (quadratic phases only)."""
        self.quadratic_phases()
        return self._per_phase(lambda ph, x: x @ ph.matrix, data)

    def apply_inverse(self, data: np.ndarray) -> np.ndarray:
        self.quadratic_phases()
        return self._per_phase(lambda ph, x: x @ ph.inverse, data)

    def apply_field(self, f: TensorField) -> TensorField:
        self._check(f)
        return f.like(self.apply(f.data))

    def apply_inverse_field(self, f: TensorField) -> TensorField:
        self._check(f)
        return f.like(self.apply_inverse(f.data))

    def as_stiffness_field(self) -> StiffnessField:
        """Dense per-cell stiffness view (used by material scalar products)."""
        return StiffnessField(self.physics, self.grid.dim, self._dense_matrix(), self.grid)

    # -- potential interface (non-linear capable) -------------------------------

    def potential_value(self, f: TensorField) -> np.ndarray:
        """w(x, f) cell-wise: equals the strain energy density for quadratic phases."""
        self._check(f)
        out = np.zeros(self.grid.dims)
        for pid, mask in self._masks.items():
            out[mask] = self.table[pid].value(f.data[mask])
        return out

    def dual_potential_value(self, f: TensorField) -> np.ndarray:
        """w*(x, f) cell-wise: the complementary energy density."""
        self._check(f)
        out = np.zeros(self.grid.dims)
        for pid, mask in self._masks.items():
            out[mask] = self.table[pid].dual_value(f.data[mask])
        return out

    def grad_potential(self, f: TensorField) -> TensorField:
        """dw/de cell-wise: equals L e for quadratic phases."""
        self._check(f)
        return f.like(self._per_phase(lambda ph, x: ph.grad(x), f.data))

    def grad_dual_potential(self, f: TensorField) -> TensorField:
        """dw*/dt cell-wise: equals L^-1 t for quadratic phases."""
        self._check(f)
        return f.like(self._per_phase(lambda ph, x: ph.dual_grad(x), f.data))

    def constitutive_error(self, stress: TensorField, strain: TensorField):
        """Error-in-constitutive-relations density and its mean.

        Quadratic phases use the residual quadratic form
        ``1/2 (t - L e) : L^-1 (t - L e)``; other phases the Fenchel-Young
        gap ``w(e) + w*(t) - t : e``.  Both are non-negative cell-wise and
        vanish exactly where the material law holds.
        """
        self._check(stress)
        self._check(strain)
        density = np.zeros(self.grid.dims)
        for pid, mask in self._masks.items():
            ph = self.table[pid]
            t, e = stress.data[mask], strain.data[mask]
            if ph.is_quadratic:
                res = t - e @ ph.matrix
                density[mask] = 0.5 * np.einsum("...i,...i->...", res @ ph.inverse, res)
            else:
                density[mask] = (
                    ph.value(e) + ph.dual_value(t) - np.einsum("...i,...i->...", t, e)
                )
        return density, float(density.mean())


def uniform_phase_map(grid, physics, potential) -> PhaseMap:
    ids = np.zeros(grid.dims, dtype=np.int64)
    return PhaseMap(grid, physics, ids, {0: potential})


# -- raster ingestion ---------------------------------------------------------


def read_pgm_ids(path) -> np.ndarray:
    """Read an ASCII PGM (P2) raster of phase ids.

    Image rows map to the first grid axis and columns to the second, so a
    W x H image yields an (H, W)-shaped id array.
    """
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise PhaseTableError(f"{path}: not an ASCII PGM (P2) raster")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
        values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    except ValueError as exc:
        raise PhaseTableError(f"{path}: malformed PGM payload") from exc
    if values.size != width * height:
        raise PhaseTableError(
            f"{path}: expected {width * height} pixels, found {values.size}"
        )
    if values.min() < 0 or values.max() > maxval:
        raise PhaseTableError(f"{path}: pixel values outside [0, {maxval}]")
    return values.reshape(height, width)


def raster_ids_from_dump(field: TensorField) -> np.ndarray:
    """Interpret a raw field dump as a phase raster.

    The id is stored replicated in every component; component 0 is read back
    and must hold non-negative integers.
    """
    ids = field.data[..., 0]
    rounded = np.rint(ids)
    if np.abs(ids - rounded).max() > 1e-9 or rounded.min() < 0:
        raise PhaseTableError("dump does not hold non-negative integer phase ids")
    return rounded.astype(np.int64)
