"""Spectral homogenization of periodic composites.

Reference-medium Green's operators acting as orthogonal projectors in
energetic Hilbert spaces, four minimizable functionals with closed-form
gradients, and gradient-based solvers, validated against the closed-form
square-inclusion conductivity benchmark.
"""

from .constitutive import (
    PhaseMap,
    PowerLawPotential,
    QuadraticPotential,
    read_pgm_ids,
    uniform_phase_map,
)
from .fields import (
    MacroscopicLoad,
    TensorField,
    average,
    dot_dual,
    dot_material,
    dot_strain,
    dot_stress,
    norm_l2,
    norm_strain,
    norm_stress,
    read_dump,
    write_dump,
)
from .functionals import (
    FunctionalEval,
    eval_complementary,
    eval_energy,
    eval_equilibrium_gap,
    eval_twofield,
    prop_bound_constant,
)
from .green import GreenOperator, Subspace
from .grid import Grid, Physics
from .homogenize import (
    EffectiveTensor,
    HomogProblem,
    assemble_effective,
    build_problem,
    effective_from_pair,
    effective_from_strain,
    laminate_exact_conductivity,
    make_benchmark,
    obnosov_exact,
    trajectory_point,
)
from .solvers import (
    BetaRule,
    IterationTrace,
    Scheme,
    SchemeConfig,
    SolveResult,
    StopCriterion,
    check_stop,
    default_reference,
    solve,
    solve_cg,
    solve_fixed_step,
    solve_nonlinear_cg,
    solve_optimal_step,
)
from .stiffness import StiffnessField

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
