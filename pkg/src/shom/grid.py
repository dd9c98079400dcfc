"""Periodic regular grids and the symmetric-tensor component basis.

A unit cell is sampled on a regular grid of N1 x ... x Nd cells (d = 2 or 3).
Tensor values are stored per cell in an orthonormal component basis:

* conductivity physics: plain vectors of length d;
* elasticity physics: symmetric second-order tensors in the orthonormal
  symmetric basis of length d*(d+1)/2, with off-diagonal entries scaled by
  sqrt(2) so that the Frobenius double contraction of two tensors is the
  ordinary dot product of their stored components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SQRT2 = np.sqrt(2.0)


class Physics(str, Enum):
    CONDUCTIVITY = "conductivity"
    ELASTICITY = "elasticity"


def component_count(physics: Physics, dim: int) -> int:
    """Number of stored components per cell for the given physics."""
    if physics == Physics.CONDUCTIVITY:
        return dim
    return dim * (dim + 1) // 2


# Index pairs of the off-diagonal entries, in storage order after the
# diagonal block: (d=2) -> [(0,1)]; (d=3) -> [(1,2), (0,2), (0,1)].
_OFFDIAG = {2: [(0, 1)], 3: [(1, 2), (0, 2), (0, 1)]}


def sym_to_components(t: np.ndarray) -> np.ndarray:
    """Pack a (..., d, d) symmetric tensor into orthonormal-basis components."""
    d = t.shape[-1]
    comps = [t[..., i, i] for i in range(d)]
    comps += [SQRT2 * t[..., i, j] for i, j in _OFFDIAG[d]]
    return np.stack(comps, axis=-1)


def components_to_sym(v: np.ndarray, dim: int) -> np.ndarray:
    """Unpack orthonormal-basis components into a (..., d, d) symmetric tensor."""
    t = np.zeros(v.shape[:-1] + (dim, dim), dtype=v.dtype)
    for i in range(dim):
        t[..., i, i] = v[..., i]
    for k, (i, j) in enumerate(_OFFDIAG[dim]):
        t[..., i, j] = t[..., j, i] = v[..., dim + k] / SQRT2
    return t


def identity_components(dim: int) -> np.ndarray:
    """Components of the second-order identity tensor."""
    out = np.zeros(component_count(Physics.ELASTICITY, dim))
    out[:dim] = 1.0
    return out


@dataclass(frozen=True)
class Grid:
    """Regular periodic grid over a rectangular unit cell.

    Parameters
    ----------
    dims : tuple of int
        Cell counts (N1, ..., Nd), d in {2, 3}, every Nj >= 2.
    cell_size : tuple of float, optional
        Physical edge lengths (Y1, ..., Yd) of the unit cell; defaults to 1.
    """

    dims: tuple
    cell_size: tuple = field(default=None)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {len(dims)}")
        if any(n < 2 for n in dims):
            raise ValueError(f"all grid dims must be >= 2, got {dims}")
        size = self.cell_size
        if size is None:
            size = (1.0,) * len(dims)
        size = tuple(float(s) for s in size)
        if len(size) != len(dims):
            raise ValueError("cell_size length must match dims length")
        if any(s <= 0 for s in size):
            raise ValueError(f"cell edge lengths must be positive, got {size}")
        object.__setattr__(self, "cell_size", size)

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def ncells(self) -> int:
        return int(np.prod(self.dims))

    def axis_frequencies(self, axis: int, half: bool = False) -> np.ndarray:
        """Angular frequencies 2*pi*k/Yj along one axis, integer k in [-N/2, N/2).

        With ``half=True``, the non-negative layout of a real transform's
        last axis is returned instead.
        """
        n = self.dims[axis]
        step = self.cell_size[axis] / n
        fftfreq = np.fft.rfftfreq if half else np.fft.fftfreq
        return 2.0 * np.pi * fftfreq(n, d=step)

    def frequencies(self, half_last_axis: bool = False) -> np.ndarray:
        """Angular frequency vectors on the spectral grid, shape (*kdims, d)."""
        axes = [
            self.axis_frequencies(a, half=half_last_axis and a == self.dim - 1)
            for a in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)
