"""Problem assembly, benchmark microstructures and effective properties.

The effective operator is extracted either from the energy of a converged
strain solve (variational identity) or from the product of the mean stress
and mean strain of a converged two-field solve (Hill's identity).  The full
matrix is assembled from unit loads for the diagonal and pair loads for the
off-diagonal entries via the polarization identity; the matrix of mean
stresses from the unit-load solves is kept alongside as a symmetry
cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constitutive import PhaseMap, QuadraticPotential
from .fields import MacroscopicLoad, TensorField, average, dot_dual
from .functionals import eval_twofield
from .green import GreenOperator
from .grid import Grid, Physics, component_count
from .solvers import SchemeConfig, SolveResult, default_reference, solve


class BenchmarkError(ValueError):
    pass


@dataclass
class HomogProblem:
    """A phase map, a macroscopic load and the reference Green operator."""

    phases: PhaseMap
    load: MacroscopicLoad
    green: GreenOperator = None

    def __post_init__(self):
        if self.load.physics != self.phases.physics:
            raise BenchmarkError("load physics does not match the phase map")
        m = component_count(self.phases.physics, self.phases.grid.dim)
        if self.load.value.shape != (m,):
            raise BenchmarkError(f"load must have {m} components")
        if self.green is not None and (
            self.green.grid != self.phases.grid or self.green.physics != self.phases.physics
        ):
            raise BenchmarkError("Green operator does not match the phase map")

    def with_load(self, value) -> "HomogProblem":
        return HomogProblem(
            self.phases, MacroscopicLoad(self.phases.physics, value), self.green
        )

    def with_reference(self, reference) -> "HomogProblem":
        green = GreenOperator(reference, self.phases.grid, self.phases.physics)
        return HomogProblem(self.phases, self.load, green)


def build_problem(phases, load_value, functional="energy", reference=None) -> HomogProblem:
    """Assemble a problem with the default reference-medium rule."""
    load = MacroscopicLoad(phases.physics, load_value)
    if reference is None:
        reference = default_reference(phases, functional)
    green = GreenOperator(reference, phases.grid, phases.physics)
    return HomogProblem(phases, load, green)


# -- effective properties -------------------------------------------------------


def effective_from_strain(problem: HomogProblem, strain_fluct: TensorField) -> float:
    """Quadratic form of the effective operator along the problem's load."""
    strain = strain_fluct.like(strain_fluct.data + problem.load.value)
    stress = problem.phases.apply_field(strain)
    return dot_dual(stress, strain)


def effective_from_pair(problem, stress: TensorField, strain: TensorField) -> float:
    """Mean-stress / mean-strain product; exact at the two-field minimizer."""
    return float(average(stress) @ average(strain))


def _estimate_from_result(problem, result: SolveResult) -> float:
    if len(result.state) == 2:
        return effective_from_pair(problem, *result.state)
    return effective_from_strain(problem, result.state[0])


@dataclass
class EffectiveTensor:
    """Assembled effective operator with per-entry provenance."""

    matrix: np.ndarray
    provenance: dict = field(default_factory=dict)
    mean_stress_matrix: np.ndarray = None
    runs: dict = field(default_factory=dict)

    @property
    def ncomp(self) -> int:
        return self.matrix.shape[0]


def assemble_effective(phases, cfg: SchemeConfig, reference=None) -> EffectiveTensor:
    """Full effective matrix from unit loads plus polarization pair loads.

    Runs one solve per unit load for the diagonal (collecting the mean
    trial-stress columns on the way) and one per index pair for the
    off-diagonal entries.
    """
    m = phases.ncomp
    quad = {}
    prov = {}
    runs = {}
    mean_stress = np.zeros((m, m))

    def run(load_value):
        problem = build_problem(phases, load_value, cfg.functional, reference)
        result = solve(cfg, problem)
        return problem, result

    for i in range(m):
        load = np.zeros(m)
        load[i] = 1.0
        problem, result = run(load)
        quad[(i, i)] = _estimate_from_result(problem, result)
        runs[(i, i)] = result
        prov[(i, i)] = f"unit load {i + 1}"
        if len(result.state) == 2:
            mean_stress[:, i] = average(result.state[0])
        else:
            strain = result.state[0].like(result.state[0].data + load)
            mean_stress[:, i] = average(phases.apply_field(strain))

    matrix = np.zeros((m, m))
    for i in range(m):
        matrix[i, i] = quad[(i, i)]
    for i in range(m):
        for j in range(i + 1, m):
            load = np.zeros(m)
            load[i] = load[j] = 1.0
            problem, result = run(load)
            pair_form = _estimate_from_result(problem, result)
            runs[(i, j)] = result
            value = 0.5 * (pair_form - matrix[i, i] - matrix[j, j])
            matrix[i, j] = matrix[j, i] = value
            prov[(i, j)] = f"polarization of pair load {i + 1}+{j + 1}"
    return EffectiveTensor(matrix, prov, mean_stress, runs)


# -- trajectory coordinates -------------------------------------------------------


def trajectory_point(problem, kind, *fields) -> tuple:
    """Projection-space coordinates (const, compat, equil) of an iterate.

    ``kind='twofield'`` takes (stress, strain) and measures all three
    defects; ``kind='strain'`` takes a zero-mean strain fluctuation, which
    is kinematically and materially admissible by construction, so only the
    static defect of its trial stress is nonzero.
    """
    green = problem.green
    if kind == "twofield":
        stress, strain = fields
        feval = eval_twofield(stress, strain, problem.load.value, problem.phases, green)
        compat, const, equil = feval.parts
        return (const, compat, equil)
    if kind == "strain":
        (strain_fluct,) = fields
        strain = strain_fluct.like(strain_fluct.data + problem.load.value)
        stress = problem.phases.apply_field(strain)
        gamma = green.apply_strain(stress)
        equil = 0.5 * float(
            np.einsum(
                "...i,...i->...", gamma.data @ green.reference.matrix, gamma.data
            ).mean()
        )
        return (0.0, 0.0, equil)
    raise ValueError(f"unknown trajectory kind {kind!r}")


# -- benchmark microstructures ------------------------------------------------------


def obnosov_exact(contrast, matrix_modulus=1.0) -> float:
    """Closed-form effective conductivity of the square-inclusion array."""
    z = float(contrast)
    return matrix_modulus * np.sqrt((1.0 + 3.0 * z) / (3.0 + z))


def laminate_exact_conductivity(moduli, fractions, axis, dim) -> np.ndarray:
    """Diagonal effective conductivity of a layered medium.

    Harmonic mean across the layers (the ``axis`` direction), arithmetic
    mean along them.
    """
    moduli = np.asarray(moduli, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    across = 1.0 / float(np.sum(fractions / moduli))
    along = float(np.sum(fractions * moduli))
    diag = np.full(dim, along)
    diag[axis] = across
    return np.diag(diag)


def _two_phase_table(physics, dim, moduli):
    return {
        i: QuadraticPotential.isotropic(physics, dim, float(v)) for i, v in enumerate(moduli)
    }


def make_benchmark(name, grid: Grid, contrast=1.0, matrix_modulus=1.0, **options) -> PhaseMap:
    """Built-in phase maps: obnosov, laminate, homogeneous, checkerboard.

    All are conductivity microstructures; the inclusion/second phase carries
    modulus ``contrast * matrix_modulus`` and the matrix ``matrix_modulus``.
    """
    name = str(name).lower()
    physics = Physics.CONDUCTIVITY
    if name == "homogeneous":
        ids = np.zeros(grid.dims, dtype=np.int64)
        table = {0: QuadraticPotential.isotropic(physics, grid.dim, matrix_modulus)}
        return PhaseMap(grid, physics, ids, table)

    moduli = (matrix_modulus, contrast * matrix_modulus)
    if name == "obnosov":
        if grid.dim != 2:
            raise BenchmarkError("the square-inclusion benchmark is two-dimensional")
        n1, n2 = grid.dims
        if n1 % 2 or n2 % 2:
            raise BenchmarkError(
                "the square-inclusion benchmark needs even cell counts so the "
                "quarter-volume inclusion is pixel-exact"
            )
        ids = np.zeros(grid.dims, dtype=np.int64)
        lo1, lo2 = n1 // 4, n2 // 4
        ids[lo1 : lo1 + n1 // 2, lo2 : lo2 + n2 // 2] = 1
        return PhaseMap(grid, physics, ids, _two_phase_table(physics, grid.dim, moduli))

    if name == "laminate":
        axis = int(options.get("axis", 0))
        fractions = np.asarray(options.get("fractions", (0.5, 0.5)), dtype=float)
        moduli = options.get("moduli", moduli)
        if len(moduli) != len(fractions):
            raise BenchmarkError("laminate needs one modulus per layer fraction")
        if fractions.min() <= 0 or abs(fractions.sum() - 1.0) > 1e-12:
            raise BenchmarkError("laminate fractions must be positive and sum to 1")
        n = grid.dims[axis]
        counts = np.rint(fractions * n).astype(int)
        counts[-1] = n - counts[:-1].sum()
        if counts.min() <= 0:
            raise BenchmarkError(f"laminate fractions unresolvable on {n} cells")
        bounds = np.concatenate([[0], np.cumsum(counts)])
        axis_ids = np.zeros(n, dtype=np.int64)
        for phase, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            axis_ids[lo:hi] = phase
        shape = [1] * grid.dim
        shape[axis] = n
        ids = np.broadcast_to(axis_ids.reshape(shape), grid.dims).copy()
        return PhaseMap(grid, physics, ids, _two_phase_table(physics, grid.dim, moduli))

    if name == "checkerboard":
        if grid.dim != 2:
            raise BenchmarkError("the checkerboard benchmark is two-dimensional")
        n1, n2 = grid.dims
        if n1 % 2 or n2 % 2:
            raise BenchmarkError("the checkerboard benchmark needs even cell counts")
        i1 = (np.arange(n1) >= n1 // 2).astype(np.int64)
        i2 = (np.arange(n2) >= n2 // 2).astype(np.int64)
        ids = (i1[:, None] + i2[None, :]) % 2
        return PhaseMap(grid, physics, ids, _two_phase_table(physics, grid.dim, moduli))

    raise BenchmarkError(f"unknown benchmark {name!r}")


def laminate_actual_fractions(phases: PhaseMap) -> np.ndarray:
    """Realized volume fractions of a phase map, sorted by id (exact oracles)."""
    fractions = phases.volume_fractions()
    return np.array([fractions[k] for k in sorted(fractions)])
