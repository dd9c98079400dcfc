"""Tensor fields on periodic grids and their energetic scalar products.

Strain-like and stress-like fields live in dual Hilbert spaces whose scalar
products are weighted by a uniform reference stiffness (strain space) or its
inverse (stress space).  Cell sums rely on numpy's pairwise summation so the
512^2 benchmarks keep close to full double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, Physics, component_count
from .stiffness import StiffnessError, StiffnessField

_HEADER_BYTES = 64
_PHYS_CODE = {Physics.CONDUCTIVITY: "C", Physics.ELASTICITY: "E"}
_CODE_PHYS = {v: k for k, v in _PHYS_CODE.items()}


class FieldShapeError(ValueError):
    """Raised when field data does not match its grid/physics."""


@dataclass
class TensorField:
    """Per-cell tensor values in the orthonormal component basis.

    ``data`` has shape ``(*grid.dims, m)`` with ``m`` the component count of
    the physics; fields are value-semantic containers with no hidden state.
    """

    grid: Grid
    physics: Physics
    data: np.ndarray

    def __post_init__(self):
        self.physics = Physics(self.physics)
        self.data = np.asarray(self.data, dtype=float)
        m = component_count(self.physics, self.grid.dim)
        if self.data.shape != self.grid.dims + (m,):
            raise FieldShapeError(
                f"expected data shape {self.grid.dims + (m,)}, got {self.data.shape}"
            )

    @classmethod
    def zeros(cls, grid, physics):
        m = component_count(Physics(physics), grid.dim)
        return cls(grid, physics, np.zeros(grid.dims + (m,)))

    @classmethod
    def uniform(cls, grid, physics, value):
        m = component_count(Physics(physics), grid.dim)
        value = np.asarray(value, dtype=float)
        if value.shape != (m,):
            raise FieldShapeError(f"uniform value must have {m} components")
        return cls(grid, physics, np.broadcast_to(value, grid.dims + (m,)).copy())

    @property
    def ncomp(self) -> int:
        return self.data.shape[-1]

    def copy(self):
        return TensorField(self.grid, self.physics, self.data.copy())

    def like(self, data):
        return TensorField(self.grid, self.physics, data)

    # value-type arithmetic, convenient in tests and functional algebra
    def __add__(self, other):
        return self.like(self.data + _raw(other))

    def __sub__(self, other):
        return self.like(self.data - _raw(other))

    def __mul__(self, scalar):
        return self.like(self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.data)


def _raw(f):
    return f.data if isinstance(f, TensorField) else np.asarray(f, dtype=float)


@dataclass
class MacroscopicLoad:
    """Imposed macroscopic mean of the strain-like field."""

    physics: Physics
    value: np.ndarray

    def __post_init__(self):
        self.physics = Physics(self.physics)
        self.value = np.asarray(self.value, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.value)):
            raise FieldShapeError("macroscopic load must have finite entries")

    def as_field(self, grid) -> TensorField:
        return TensorField.uniform(grid, self.physics, self.value)


def _same_layout(a: TensorField, b: TensorField):
    if a.grid != b.grid or a.physics != b.physics:
        raise FieldShapeError("fields must share grid and physics")


def _check_uniform_reference(reference: StiffnessField):
    if not isinstance(reference, StiffnessField) or not reference.is_uniform:
        raise StiffnessError("the reference stiffness must be a uniform StiffnessField")


def average(f: TensorField) -> np.ndarray:
    """Discrete cell mean, one value per component."""
    return f.data.mean(axis=tuple(range(f.grid.dim)))


def _mean_density(prod: np.ndarray, dim: int) -> float:
    return float(prod.sum(axis=-1).mean(axis=tuple(range(dim))))


def dot_strain(a: TensorField, b: TensorField, reference: StiffnessField) -> float:
    """Energetic scalar product of strain-like fields, <L0 a : b>."""
    _same_layout(a, b)
    _check_uniform_reference(reference)
    return _mean_density((a.data @ reference.matrix) * b.data, a.grid.dim)


def dot_stress(a: TensorField, b: TensorField, reference: StiffnessField) -> float:
    """Energetic scalar product of stress-like fields, <a : L0^-1 b>."""
    _same_layout(a, b)
    _check_uniform_reference(reference)
    return _mean_density((a.data @ reference.inverse_matrix) * b.data, a.grid.dim)


def dot_dual(a: TensorField, b: TensorField) -> float:
    """Duality pairing <a : b> (virtual-work product)."""
    _same_layout(a, b)
    return _mean_density(a.data * b.data, a.grid.dim)


def dot_material(a: TensorField, b: TensorField, stiffness, dual: bool = False) -> float:
    """Scalar product weighted by a (possibly per-cell) stiffness.

    ``dual=False`` gives <L a : b>; ``dual=True`` gives <a : L^-1 b>.
    ``stiffness`` may be a StiffnessField or any object exposing
    apply/apply_inverse on component arrays (e.g. a PhaseMap).
    """
    _same_layout(a, b)
    wb = stiffness.apply_inverse(b.data) if dual else stiffness.apply(b.data)
    return _mean_density(a.data * wb, a.grid.dim)


def norm_strain(a: TensorField, reference: StiffnessField) -> float:
    return float(np.sqrt(max(dot_strain(a, a, reference), 0.0)))


def norm_stress(a: TensorField, reference: StiffnessField) -> float:
    return float(np.sqrt(max(dot_stress(a, a, reference), 0.0)))


def norm_l2(a: TensorField) -> float:
    return float(np.sqrt(max(dot_dual(a, a), 0.0)))


def uniform_dot(physics_value_a: np.ndarray, value_b: np.ndarray) -> float:
    """Double contraction of two uniform tensors given as component vectors."""
    return float(np.dot(np.ravel(physics_value_a), np.ravel(value_b)))


# -- raw field dumps ---------------------------------------------------------


def _format_header(dim: int, physics: Physics, dims) -> bytes:
    text = f"SHOM1 d={dim} phys={_PHYS_CODE[physics]} dims={'x'.join(str(n) for n in dims)}"
    if len(text) > _HEADER_BYTES - 1:
        raise FieldShapeError("dump header does not fit in 64 bytes")
    return (text + " " * (_HEADER_BYTES - 1 - len(text)) + "\n").encode("ascii")


def write_dump(f: TensorField, path):
    """Write the raw little-endian float64 dump with its 64-byte header."""
    with open(path, "wb") as fh:
        fh.write(_format_header(f.grid.dim, f.physics, f.grid.dims))
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_dump(path, cell_size=None) -> TensorField:
    """Read a raw field dump written by :func:`write_dump`."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_BYTES)
        payload = fh.read()
    try:
        tokens = dict(
            item.split("=", 1) for item in header.decode("ascii").split() if "=" in item
        )
        if not header.startswith(b"SHOM1"):
            raise ValueError
        dim = int(tokens["d"])
        physics = _CODE_PHYS[tokens["phys"]]
        dims = tuple(int(n) for n in tokens["dims"].split("x"))
    except (ValueError, KeyError) as exc:
        raise FieldShapeError(f"not a field dump: bad header {header!r}") from exc
    if len(dims) != dim:
        raise FieldShapeError("dump header dims do not match its dimension")
    grid = Grid(dims, cell_size)
    m = component_count(physics, dim)
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != grid.ncells * m:
        raise FieldShapeError(
            f"dump payload has {data.size} values, expected {grid.ncells * m}"
        )
    return TensorField(grid, physics, data.reshape(grid.dims + (m,)).astype(float))
