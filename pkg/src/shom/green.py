"""Reference-medium Green's operators in Fourier space.

The strain operator maps a stress-like polarization to the compatible
zero-mean strain of the associated auxiliary problem; on each nonzero
frequency it acts through the closed-form kernel

    K(xi) = [xi (x) (xi . L0 . xi)^-1 (x) xi]_sym,      K(0) = 0,

assembled from the inverse of the acoustic tensor of the uniform reference
medium.  The stress operator is never assembled independently: it is always
evaluated through the projector algebra, which makes the composition of the
two operators vanish to round-off by construction.

With the component-basis storage the kernel on every frequency is the
symmetric positive semi-definite matrix ``U A^-1 U^T`` where the rows of
``U`` are the basis tensors contracted with the frequency vector.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .fields import TensorField, average
from .grid import Grid, Physics, component_count, components_to_sym, sym_to_components
from .stiffness import StiffnessField

# kernel tables become mandatory above this many cells per axis direction
_PRECOMPUTE_EDGE = 64


class Subspace(Enum):
    COMPATIBLE = "compatible"          # zero-mean compatible strains
    COMPAT_ORTH = "compat_orth"        # orthogonal complement of admissible strains
    EQUILIBRATED = "equilibrated"      # zero-mean divergence-free stresses
    EQUIL_ORTH = "equil_orth"          # orthogonal complement of admissible stresses


def _sym_basis_tensors(dim: int) -> np.ndarray:
    """Orthonormal basis of symmetric tensors as (m, d, d) matrices."""
    m = component_count(Physics.ELASTICITY, dim)
    return components_to_sym(np.eye(m), dim)


def _mandel_to_fourth_order(matrix: np.ndarray, dim: int) -> np.ndarray:
    basis = _sym_basis_tensors(dim)
    return np.einsum("ab,aij,bkl->ijkl", matrix, basis, basis)


class GreenOperator:
    """Spectral Green's operators and the four orthogonal projectors.

    Immutable after construction; apply methods allocate their own work
    buffers so concurrent applications on distinct fields are safe.

    Parameters
    ----------
    reference : StiffnessField
        Uniform SPD reference medium defining the energetic metrics.
    grid : Grid
    physics : Physics
    spectral_mode : {"rfft", "fft"}
        Real-input transforms exploit the conjugate-even spectrum; the full
        complex transform is kept as a cross-check path.
    precompute : bool, optional
        Store the kernel table.  Defaults to True above 64^d cells and to
        on-the-fly evaluation below (memory/speed trade-off only).
    """

    def __init__(self, reference, grid, physics, spectral_mode="rfft", precompute=None):
        physics = Physics(physics)
        if not reference.is_uniform:
            raise ValueError("the Green operator needs a uniform reference medium")
        if reference.physics != physics or reference.dim != grid.dim:
            raise ValueError("reference stiffness does not match grid/physics")
        if spectral_mode not in ("rfft", "fft"):
            raise ValueError(f"unknown spectral mode {spectral_mode!r}")
        self.reference = reference
        self.grid = grid
        self.physics = physics
        self.spectral_mode = spectral_mode
        if precompute is None:
            precompute = grid.ncells > _PRECOMPUTE_EDGE ** grid.dim
        self.precompute = bool(precompute)
        self._axes = tuple(range(grid.dim))
        self._xi = self._real_calculus_frequencies()
        self._degenerate = np.all(self._xi == 0.0, axis=-1)
        self._table = self._build_apply_table() if self.precompute else None
        self._weights = self._spectral_weights()

    def _real_calculus_frequencies(self) -> np.ndarray:
        """Frequency vectors with Nyquist components zeroed.

        A real-to-real spectral operator must commute with complex
        conjugation of the spectrum; on even axes that forces the ambiguous
        +-N/2 component to zero, exactly as in real spectral
        differentiation.  This keeps every projector identity exact on even
        grids (odd grids have no Nyquist bin and are unaffected).
        """
        xi = self.grid.frequencies(half_last_axis=(self.spectral_mode == "rfft"))
        for axis, n in enumerate(self.grid.dims):
            if n % 2 == 0:
                index = [slice(None)] * self.grid.dim
                last = self.grid.dim - 1
                if self.spectral_mode == "rfft" and axis == last:
                    index[axis] = xi.shape[axis] - 1
                else:
                    index[axis] = n // 2
                xi[tuple(index) + (axis,)] = 0.0
        return xi

    # -- kernel --------------------------------------------------------------

    def _build_apply_table(self):
        """Per-frequency data needed to apply the kernel.

        Conductivity kernels are rank one, so the application is a scaled
        outer-product contraction; elasticity stores the full component
        matrix.  Either way each kernel block is symmetric PSD.
        """
        xi = self._xi
        degenerate = self._degenerate
        if self.physics == Physics.CONDUCTIVITY:
            quad = np.einsum("...i,ij,...j->...", xi, self.reference.matrix, xi)
            quad[degenerate] = 1.0  # xi is zero there, so the kernel row is too
            return np.reciprocal(quad)
        fourth = _mandel_to_fourth_order(self.reference.matrix, self.grid.dim)
        acoustic = np.einsum("ijkl,...j,...l->...ik", fourth, xi, xi)
        acoustic[degenerate] = np.eye(self.grid.dim)
        inv = np.linalg.inv(acoustic)
        basis = _sym_basis_tensors(self.grid.dim)
        contracted = np.einsum("aij,...j->...ai", basis, xi)
        return np.einsum("...ai,...ij,...bj->...ab", contracted, inv, contracted)

    def kernel_matrices(self) -> np.ndarray:
        """Full per-frequency kernel blocks (diagnostics and tests)."""
        table = self._table if self._table is not None else self._build_apply_table()
        if self.physics == Physics.ELASTICITY:
            return table
        return np.einsum("...i,...j->...ij", self._xi, self._xi) * table[..., None, None]

    def _apply_kernel(self, spec: np.ndarray) -> np.ndarray:
        table = self._table if self._table is not None else self._build_apply_table()
        if self.physics == Physics.CONDUCTIVITY:
            xi = self._xi
            coeff = np.einsum("...i,...i->...", xi, spec) * table
            return xi * coeff[..., None]
        # complex spectrum against a real kernel: split to avoid the upcast
        out = np.einsum("...ab,...b->...a", table, spec.real).astype(complex)
        out += 1j * np.einsum("...ab,...b->...a", table, spec.imag)
        return out

    def _spectral_weights(self) -> np.ndarray:
        """Plancherel multiplicities of the stored spectrum bins."""
        if self.spectral_mode == "fft":
            return np.ones(self.grid.dims)
        n_last = self.grid.dims[-1]
        w = np.full(self._xi.shape[:-1], 2.0)
        w[..., 0] = 1.0
        if n_last % 2 == 0:
            w[..., -1] = 1.0
        return w

    # -- transforms ----------------------------------------------------------

    def _forward(self, data: np.ndarray) -> np.ndarray:
        if self.spectral_mode == "rfft":
            return np.fft.rfftn(data, axes=self._axes)
        return np.fft.fftn(data, axes=self._axes)

    def _inverse(self, spec: np.ndarray) -> np.ndarray:
        if self.spectral_mode == "rfft":
            return np.fft.irfftn(spec, s=self.grid.dims, axes=self._axes)
        return np.fft.ifftn(spec, axes=self._axes).real

    def _check(self, f: TensorField):
        if f.grid != self.grid or f.physics != self.physics:
            raise ValueError("field does not match the Green operator grid/physics")

    # -- operators -----------------------------------------------------------

    def apply_strain(self, stress_like: TensorField, with_div_norm=False):
        """Strain Green's operator: compatible zero-mean strain from a polarization.

        With ``with_div_norm=True``, also returns the L2 norm of the
        divergence of the input, read off the already-computed spectrum.
        """
        self._check(stress_like)
        spec = self._forward(stress_like.data)
        out = stress_like.like(self._inverse(self._apply_kernel(spec)))
        if not with_div_norm:
            return out
        return out, self._div_norm_from_spectrum(spec)

    def apply_stress(self, strain_like: TensorField) -> TensorField:
        """Stress Green's operator, evaluated through the projector algebra."""
        dev = self._strain_fluctuation(strain_like)
        return strain_like.like(dev @ self.reference.matrix)

    def _strain_fluctuation(self, f: TensorField) -> np.ndarray:
        """Raw data of f - <f> - P_compatible f."""
        compat = self.project(f, Subspace.COMPATIBLE)
        return f.data - average(f) - compat.data

    def project(self, f: TensorField, subspace) -> TensorField:
        """Orthogonal projection in the matching energetic scalar product."""
        self._check(f)
        subspace = Subspace(subspace)
        l0 = self.reference.matrix
        if subspace == Subspace.COMPATIBLE:
            return self.apply_strain(f.like(f.data @ l0))
        if subspace == Subspace.EQUIL_ORTH:
            return f.like(self.apply_strain(f).data @ l0)
        if subspace == Subspace.COMPAT_ORTH:
            return f.like(self._strain_fluctuation(f))
        # EQUILIBRATED
        unbalanced = self.project(f, Subspace.EQUIL_ORTH)
        return f.like(f.data - average(f) - unbalanced.data)

    def split_l2(self, f: TensorField):
        """Mean / compatible / incompatible parts, orthogonal in plain L2.

        The compatible part is the kernel conjugated by the square root of
        the reference medium; the remainder closes the decomposition exactly.
        """
        self._check(f)
        half = self.reference.sqrt_matrix
        compat = self.apply_strain(f.like(f.data @ half))
        compat = f.like(compat.data @ half)
        mean = average(f)
        incompat = f.like(f.data - mean - compat.data)
        return mean, compat, incompat

    # -- divergence diagnostics -----------------------------------------------

    def _contract_xi(self, spec: np.ndarray) -> np.ndarray:
        """xi . spec per frequency (scalar for vectors, vector for tensors)."""
        xi = self._xi
        if self.physics == Physics.CONDUCTIVITY:
            return np.einsum("...i,...i->...", xi, spec)
        basis = _sym_basis_tensors(self.grid.dim)
        contracted = np.einsum("aij,...j->...ai", basis, xi)
        return np.einsum("...a,...ai->...i", spec, contracted)

    def _div_norm_from_spectrum(self, spec: np.ndarray) -> float:
        div_hat = self._contract_xi(spec)
        mag = np.abs(div_hat) ** 2
        if self.physics == Physics.ELASTICITY:
            mag = mag.sum(axis=-1)
        total = float((self._weights * mag).sum())
        return np.sqrt(total) / self.grid.ncells

    def divergence_norm(self, f: TensorField) -> float:
        """L2 norm of div f, computed spectrally (Plancherel)."""
        self._check(f)
        return self._div_norm_from_spectrum(self._forward(f.data))
