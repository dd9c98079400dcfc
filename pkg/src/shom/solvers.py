"""Gradient-based minimization engines over the energetic Hilbert spaces.

All schemes share one structure: a state (one strain field, or a
stress/strain pair), the gradient of the chosen functional in the matching
energetic metric, and per-iteration trace records.  For quadratic problems
the gradient is affine, so optimal-step and conjugate-gradient iterations
propagate the residual and the trace diagnostics by linear recursion; the
only transforms per iteration are the ones inside a single operator
application.

Stopping follows the normalized criteria: the gradient norm is compared to
``tol_grad`` times the energetic norm of the load, and (for the geometric
functionals, whose stationary value is zero) the value is compared to
``tol_value`` times the reference energy of the load.  The stress-divergence
norm is a diagnostic column only and never terminates a run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fields import MacroscopicLoad, TensorField, average, dot_strain, dot_stress
from .functionals import (
    FunctionalEval,
    _complementary_of_admissible,
    _energy_of_admissible,
    energy_hessian,
    equilibrium_gap_hessian,
    eval_energy,
    eval_equilibrium_gap,
    eval_twofield,
    twofield_hessian,
)
from .green import GreenOperator
from .stiffness import StiffnessField


class Scheme(str, Enum):
    FIXED_STEP = "fixed_step"
    OPTIMAL_STEP = "optimal_step"
    CG = "cg"
    NONLINEAR_CG = "nonlinear_cg"


class BetaRule(str, Enum):
    FLETCHER_REEVES = "fletcher_reeves"
    POLAK_RIBIERE = "polak_ribiere"


class StopCriterion(str, Enum):
    GRADIENT = "gradient"
    VALUE = "value"
    MAX_ITER = "max_iter"


FUNCTIONALS = ("energy", "equilibrium", "twofield")


class SolverError(RuntimeError):
    pass


class SolverBreakdownError(SolverError):
    """Curvature along the search direction was not positive."""


class SolverDivergenceError(SolverError):
    """The functional value kept increasing; the reference medium is likely bad."""


class LineSearchError(SolverError):
    pass


@dataclass
class SchemeConfig:
    """One solver run: scheme, functional, tolerances and initialization."""

    scheme: Scheme = Scheme.CG
    functional: str = "energy"
    max_iter: int = 20000
    tol_grad: float = 1e-8
    tol_value: float = 1e-14
    tol_div: float = None          # diagnostic threshold, reported only
    reference: object = None       # StiffnessField, scalar modulus, or None
    init: object = "default"       # 'default' | 'zero' | 'paper' | explicit fields
    beta_rule: BetaRule = BetaRule.FLETCHER_REEVES
    record_trace: bool = True

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.beta_rule = BetaRule(self.beta_rule)
        if self.functional not in FUNCTIONALS:
            raise ValueError(f"unknown functional {self.functional!r}; use {FUNCTIONALS}")
        if self.tol_grad <= 0 or self.tol_value <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.scheme == Scheme.FIXED_STEP and self.functional != "energy":
            raise ValueError("the fixed-step scheme is only valid for the energy functional")

    def label(self) -> str:
        return f"{self.scheme.value}-{self.functional}"


TRACE_COLUMNS = ("n", "value", "grad_norm", "d_compat", "d_const", "d_equil", "div_norm")


def leff_label(load_value: np.ndarray) -> str:
    """Trace column name for the effective estimate under this load."""
    load_value = np.asarray(load_value, dtype=float)
    nz = np.nonzero(load_value)[0]
    if len(nz) == 1:
        return f"Leff_{nz[0] + 1}{nz[0] + 1}"
    return "Leff_load"


class IterationTrace:
    """Per-iteration records of one solver run.

    ``rows`` hold the CSV columns; ``extras`` hold additional diagnostics
    (admissible-part energies for two-field runs).  An optional ``sink``
    callable receives each row as it is appended, for streaming output.
    """

    def __init__(self, leff_column="Leff_11", metadata=None, sink=None):
        self.leff_column = leff_column
        self.metadata = dict(metadata or {})
        self.rows = []
        self.extras = []
        self.sink = sink

    def append(self, row: dict, extra: dict = None):
        self.rows.append(row)
        self.extras.append(extra or {})
        if self.sink is not None:
            self.sink(row)

    def column(self, name) -> np.ndarray:
        key = "leff" if name in ("leff", self.leff_column) else name
        return np.array([r[key] for r in self.rows])

    def extra_column(self, name) -> np.ndarray:
        return np.array([e.get(name, np.nan) for e in self.extras])

    @property
    def columns(self):
        return TRACE_COLUMNS + (self.leff_column,)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                values = [row[c] for c in TRACE_COLUMNS] + [row["leff"]]
                writer.writerow([_csv_num(v) for v in values])

    def trajectory(self) -> np.ndarray:
        """(n, 3) array of (d_const, d_compat, d_equil) projection coordinates."""
        return np.column_stack(
            [self.column("d_const"), self.column("d_compat"), self.column("d_equil")]
        )


def _csv_num(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class SolveResult:
    state: tuple
    trace: IterationTrace
    converged: bool
    criterion: StopCriterion
    n_iter: int
    final: FunctionalEval

    @property
    def strain_fluctuation(self) -> TensorField:
        return self.state[-1]

    @property
    def stress(self) -> TensorField:
        if len(self.state) != 2:
            raise AttributeError("single-field result has no stress component")
        return self.state[0]

    @property
    def strain_trial(self) -> TensorField:
        return self.state[-1]


def default_reference(phases, functional) -> StiffnessField:
    """Default reference medium: arithmetic mean of the extreme phase
    eigenvalues for the strain-based functionals, geometric mean for the
    two-field one; always isotropic, always overridable."""
    lo, hi = phases.eig_range()
    scalar = float(np.sqrt(lo * hi)) if functional == "twofield" else 0.5 * (lo + hi)
    m = phases.ncomp
    return StiffnessField(phases.physics, phases.grid.dim, scalar * np.eye(m))


def resolve_reference(cfg: SchemeConfig, phases) -> StiffnessField:
    ref = cfg.reference
    if ref is None:
        return default_reference(phases, cfg.functional)
    if isinstance(ref, StiffnessField):
        return ref
    scalar = float(ref)
    return StiffnessField(phases.physics, phases.grid.dim, scalar * np.eye(phases.ncomp))


# -- functional bindings -------------------------------------------------------


class _ProblemBinding:
    """Shared plumbing between a functional and the generic solver loops."""

    metrics = ("e",)

    def __init__(self, problem):
        self.phases = problem.phases
        self.green = problem.green
        self.load = problem.load
        self.bar = np.asarray(
            problem.load.value if isinstance(problem.load, MacroscopicLoad) else problem.load,
            dtype=float,
        )
        self.grid = self.green.grid
        self.physics = self.green.physics
        self.is_quadratic = self.phases.is_quadratic
        ref = self.green.reference
        self.load_norm_e = float(np.sqrt(self.bar @ ref.matrix @ self.bar))
        self.value_scale = 0.5 * self.load_norm_e**2
        self.load_sq = float(self.bar @ self.bar)

    def dot(self, a, b) -> float:
        ref = self.green.reference
        total = 0.0
        for metric, fa, fb in zip(self.metrics, a, b):
            total += dot_strain(fa, fb, ref) if metric == "e" else dot_stress(fa, fb, ref)
        return float(total)

    def norm(self, a) -> float:
        return float(np.sqrt(max(self.dot(a, a), 0.0)))

    def axpy(self, alpha, x, y):
        """y + alpha*x, element-wise over state tuples."""
        return tuple(yi.like(yi.data + alpha * xi.data) for xi, yi in zip(x, y))

    def effective_estimate(self, state) -> float:
        raise NotImplementedError

    def leff(self, state) -> float:
        q = self.effective_estimate(state)
        return q / self.load_sq if self.load_sq > 0 else q


class _EnergyBinding(_ProblemBinding):
    functional = "energy"
    metrics = ("e",)

    def initial(self, init):
        if isinstance(init, (tuple, list)):
            (e0,) = init
            return (e0.copy(),)
        if init in ("default", "zero"):
            return (TensorField.zeros(self.grid, self.physics),)
        raise ValueError(f"unknown init {init!r} for the energy functional")

    def evaluate(self, state, check=False) -> FunctionalEval:
        return eval_energy(state[0], self.bar, self.phases, self.green, check=check)

    def grads(self, feval):
        return (feval.grad_e,)

    def hess(self, p):
        tp, aux = energy_hessian(p[0], self.phases, self.green)
        return (tp,), aux

    def _quadratic_form(self, state, stress) -> float:
        strain = state[0].data + self.bar
        return float(np.einsum("...i,...i->...", stress.data, strain).mean())

    def effective_estimate(self, state) -> float:
        stress = state[0].like(self.phases.apply(state[0].data + self.bar))
        return self._quadratic_form(state, stress)

    def track_init(self, state, feval):
        return {"stress": feval.stress.copy()}

    def track_update(self, tracked, alpha, p, aux):
        tracked["stress"].data += alpha * aux["stress_dir"].data
        return tracked

    def row(self, n, state, tracked, grad_norm):
        stress = tracked["stress"]
        form = self._quadratic_form(state, stress)
        return {
            "n": n,
            "value": 0.5 * form,
            "grad_norm": grad_norm,
            "d_compat": 0.0,
            "d_const": 0.0,
            "d_equil": 0.5 * grad_norm**2,
            "div_norm": self.green.divergence_norm(stress),
            "leff": form / self.load_sq if self.load_sq > 0 else form,
        }, None

    def row_from_eval(self, n, state, feval):
        form = self._quadratic_form(state, feval.stress)
        return {
            "n": n,
            "value": feval.value,
            "grad_norm": feval.grad_norm,
            "d_compat": 0.0,
            "d_const": 0.0,
            "d_equil": 0.5 * feval.grad_norm**2,
            "div_norm": feval.div_norm,
            "leff": form / self.load_sq if self.load_sq > 0 else form,
        }, None


class _GapBinding(_ProblemBinding):
    functional = "equilibrium"
    metrics = ("e",)

    initial = _EnergyBinding.initial

    def evaluate(self, state, check=False) -> FunctionalEval:
        return eval_equilibrium_gap(state[0], self.bar, self.phases, self.green, check=check)

    def grads(self, feval):
        return (feval.grad_e,)

    def hess(self, p):
        tp, aux = equilibrium_gap_hessian(p[0], self.phases, self.green)
        return (tp,), aux

    _quadratic_form = _EnergyBinding._quadratic_form
    effective_estimate = _EnergyBinding.effective_estimate

    def track_init(self, state, feval):
        return {
            "energy_grad": feval.extra["energy_grad"].copy(),
            "stress": feval.stress.copy(),
        }

    def track_update(self, tracked, alpha, p, aux):
        tracked["energy_grad"].data += alpha * aux["energy_grad_dir"].data
        tracked["stress"].data += alpha * aux["stress_dir"].data
        return tracked

    def row(self, n, state, tracked, grad_norm):
        u = tracked["energy_grad"]
        value = 0.5 * dot_strain(u, u, self.green.reference)
        stress = tracked["stress"]
        form = self._quadratic_form(state, stress)
        return {
            "n": n,
            "value": value,
            "grad_norm": grad_norm,
            "d_compat": 0.0,
            "d_const": 0.0,
            "d_equil": value,
            "div_norm": self.green.divergence_norm(stress),
            "leff": form / self.load_sq if self.load_sq > 0 else form,
        }, None

    def row_from_eval(self, n, state, feval):
        form = self._quadratic_form(state, feval.stress)
        return {
            "n": n,
            "value": feval.value,
            "grad_norm": feval.grad_norm,
            "d_compat": 0.0,
            "d_const": 0.0,
            "d_equil": feval.value,
            "div_norm": feval.div_norm,
            "leff": form / self.load_sq if self.load_sq > 0 else form,
        }, None


class _TwoFieldBinding(_ProblemBinding):
    functional = "twofield"
    metrics = ("s", "e")

    def initial(self, init):
        if isinstance(init, (tuple, list)):
            s0, e0 = init
            return (s0.copy(), e0.copy())
        if init == "zero":
            return (
                TensorField.zeros(self.grid, self.physics),
                TensorField.zeros(self.grid, self.physics),
            )
        if init == "default":
            stress0 = self.bar @ self.green.reference.matrix
            return (
                TensorField.uniform(self.grid, self.physics, stress0),
                TensorField.uniform(self.grid, self.physics, self.bar),
            )
        if init == "paper":
            ones = np.ones_like(self.bar)
            return (
                TensorField.uniform(self.grid, self.physics, ones),
                TensorField.uniform(self.grid, self.physics, self.bar),
            )
        raise ValueError(f"unknown init {init!r} for the two-field functional")

    def evaluate(self, state, check=False) -> FunctionalEval:
        return eval_twofield(state[0], state[1], self.bar, self.phases, self.green)

    def grads(self, feval):
        return (feval.grad_s, feval.grad_e)

    def hess(self, p):
        (tp_s, tp_e), aux = twofield_hessian(p[0], p[1], self.phases, self.green)
        return (tp_s, tp_e), aux

    def effective_estimate(self, state) -> float:
        return float(average(state[0]) @ average(state[1]))

    def track_init(self, state, feval):
        stress, strain = state
        sperp = stress.data - feval.extra["adm_stress"].data
        compat_resid = strain.data - feval.extra["adm_strain_fluct"].data - self.bar
        return {"sperp": sperp.copy(), "compat_resid": compat_resid.copy()}

    def track_update(self, tracked, alpha, p, aux):
        sperp_inc, compat_inc = aux
        tracked["sperp"] += alpha * sperp_inc
        tracked["compat_resid"] += alpha * compat_inc
        return tracked

    def _parts(self, state, tracked):
        ref = self.green.reference
        sperp = tracked["sperp"]
        resid = tracked["compat_resid"]
        equil = 0.5 * float(
            np.einsum("...i,...i->...", sperp @ ref.inverse_matrix, sperp).mean()
        )
        compat = 0.5 * float(
            np.einsum("...i,...i->...", resid @ ref.matrix, resid).mean()
        )
        _, const = self.phases.constitutive_error(state[0], state[1])
        return compat, const, equil

    def _adm_energy(self, state, tracked):
        stress, strain = state
        adm_stress = stress.like(stress.data - tracked["sperp"])
        adm_e0 = strain.like(strain.data - tracked["compat_resid"] - self.bar)
        return (
            _energy_of_admissible(adm_e0, self.bar, self.phases),
            _complementary_of_admissible(adm_stress, self.bar, self.phases),
        )

    def row(self, n, state, tracked, grad_norm):
        compat, const, equil = self._parts(state, tracked)
        j_adm, jc_adm = self._adm_energy(state, tracked)
        row = {
            "n": n,
            "value": compat + const + equil,
            "grad_norm": grad_norm,
            "d_compat": compat,
            "d_const": const,
            "d_equil": equil,
            "div_norm": self.green.divergence_norm(state[0]),
            "leff": self.leff(state),
        }
        return row, {"energy_adm": j_adm, "complementary_adm": jc_adm}

    def row_from_eval(self, n, state, feval):
        compat, const, equil = feval.parts
        row = {
            "n": n,
            "value": feval.value,
            "grad_norm": feval.grad_norm,
            "d_compat": compat,
            "d_const": const,
            "d_equil": equil,
            "div_norm": feval.div_norm,
            "leff": self.leff(state),
        }
        j_adm, jc_adm = feval.adm_energy
        return row, {"energy_adm": j_adm, "complementary_adm": jc_adm}


_BINDINGS = {
    "energy": _EnergyBinding,
    "equilibrium": _GapBinding,
    "twofield": _TwoFieldBinding,
}


def _binding(cfg: SchemeConfig, problem) -> _ProblemBinding:
    """The problem's Green operator defines the metric unless the scheme
    config names its own reference, in which case the operator is rebuilt."""
    green = getattr(problem, "green", None)
    if cfg.reference is not None:
        ref = resolve_reference(cfg, problem.phases)
        if green is None or not np.array_equal(green.reference.matrix, ref.matrix):
            green = GreenOperator(ref, problem.phases.grid, problem.phases.physics)
    elif green is None:
        ref = default_reference(problem.phases, cfg.functional)
        green = GreenOperator(ref, problem.phases.grid, problem.phases.physics)
    return _BINDINGS[cfg.functional](_Bound(problem.phases, problem.load, green))


@dataclass
class _Bound:
    phases: object
    load: object
    green: GreenOperator


# -- stopping -------------------------------------------------------------------


def check_stop(cfg: SchemeConfig, functional, grad_norm, value, load_norm_e, value_scale):
    """Which stopping criteria fire for the given normalized measures."""
    fired = []
    grad_scale = load_norm_e if load_norm_e > 0 else 1.0
    if grad_norm <= cfg.tol_grad * grad_scale:
        fired.append(StopCriterion.GRADIENT)
    if functional in ("equilibrium", "twofield"):
        vscale = value_scale if value_scale > 0 else 1.0
        if value <= cfg.tol_value * vscale:
            fired.append(StopCriterion.VALUE)
    return fired


def _checked_stop(cfg, binding, row):
    return check_stop(
        cfg, binding.functional, row["grad_norm"], row["value"],
        binding.load_norm_e, binding.value_scale,
    )


# -- solver drivers ---------------------------------------------------------------


def _make_trace(cfg, binding, sink):
    metadata = {
        "scheme": cfg.scheme.value,
        "functional": cfg.functional,
        "reference_modulus_range": binding.green.reference.eig_range(),
        "tol_grad": cfg.tol_grad,
        "tol_value": cfg.tol_value,
        "restarts": 0,
    }
    return IterationTrace(leff_label(binding.bar), metadata, sink)


def _finish(cfg, binding, state, trace, n, criteria):
    final = binding.evaluate(state)
    converged = bool(criteria)
    criterion = criteria[0] if criteria else StopCriterion.MAX_ITER
    trace.metadata["final_grad_norm"] = final.grad_norm
    trace.metadata["converged"] = converged
    trace.metadata["criterion"] = criterion.value
    return SolveResult(state, trace, converged, criterion, n, final)


def solve_fixed_step(cfg: SchemeConfig, problem, sink=None) -> SolveResult:
    """Gradient descent with unit step on the energy functional.

    The update is exactly the classical fixed point: the new iterate is the
    old one minus the Green operator applied to its trial stress.
    """
    if cfg.functional != "energy":
        raise ValueError("the fixed-step scheme is only valid for the energy functional")
    binding = _binding(cfg, problem)
    state = binding.initial(cfg.init)
    trace = _make_trace(cfg, binding, sink)
    increases = 0
    previous = np.inf
    for n in range(cfg.max_iter + 1):
        feval = binding.evaluate(state)
        row, extra = binding.row_from_eval(n, state, feval)
        trace.append(row, extra)
        criteria = _checked_stop(cfg, binding, row)
        if criteria:
            return _finish(cfg, binding, state, trace, n, criteria)
        increases = increases + 1 if feval.value > previous else 0
        if increases >= 10:
            raise SolverDivergenceError(
                "the energy increased for 10 consecutive fixed steps; "
                "choose a softer reference medium (larger spectral margin)"
            )
        previous = feval.value
        if n == cfg.max_iter:
            break
        state = binding.axpy(-1.0, binding.grads(feval), state)
    return _finish(cfg, binding, state, trace, cfg.max_iter, [])


def _quadratic_descent(cfg, problem, conjugate, sink=None) -> SolveResult:
    binding = _binding(cfg, problem)
    if not binding.is_quadratic:
        raise SolverError(
            "optimal-step/CG residual recursion needs quadratic phases; "
            "use the non-linear CG scheme instead"
        )
    state = binding.initial(cfg.init)
    trace = _make_trace(cfg, binding, sink)

    feval = binding.evaluate(state)
    residual = tuple(g.like(-g.data) for g in binding.grads(feval))
    tracked = binding.track_init(state, feval)
    rr = binding.dot(residual, residual)
    row, extra = binding.row_from_eval(0, state, feval)
    trace.append(row, extra)
    criteria = _checked_stop(cfg, binding, row)
    if criteria:
        return _finish(cfg, binding, state, trace, 0, criteria)

    direction = tuple(r.copy() for r in residual)
    for n in range(1, cfg.max_iter + 1):
        t_dir, aux = binding.hess(direction)
        curvature = binding.dot(t_dir, direction)
        if curvature <= 0:
            raise SolverBreakdownError(
                f"non-positive curvature {curvature:.3e} along the search direction; "
                "the quadratic operator should be positive definite"
            )
        alpha = binding.dot(residual, direction) / curvature
        state = binding.axpy(alpha, direction, state)
        new_residual = binding.axpy(-alpha, t_dir, residual)
        tracked = binding.track_update(tracked, alpha, direction, aux)

        rr_new = binding.dot(new_residual, new_residual)
        if conjugate:
            correlation = binding.dot(new_residual, residual) / rr if rr > 0 else 0.0
            if correlation > 0.5:
                direction = tuple(r.copy() for r in new_residual)
                trace.metadata["restarts"] += 1
            else:
                beta = rr_new / rr if rr > 0 else 0.0
                direction = tuple(
                    r.like(r.data + beta * d.data) for r, d in zip(new_residual, direction)
                )
        else:
            direction = tuple(r.copy() for r in new_residual)
        residual = new_residual
        rr = rr_new

        row, extra = binding.row(n, state, tracked, float(np.sqrt(max(rr, 0.0))))
        trace.append(row, extra)
        criteria = _checked_stop(cfg, binding, row)
        if criteria:
            return _finish(cfg, binding, state, trace, n, criteria)
    return _finish(cfg, binding, state, trace, cfg.max_iter, [])


def solve_optimal_step(cfg: SchemeConfig, problem, sink=None) -> SolveResult:
    """Steepest descent with the analytic optimal step (quadratic problems);
    non-linear phases fall back to the line-searched machinery with the
    descent direction reset every iteration."""
    if not problem.phases.is_quadratic:
        return _nonlinear_descent(cfg, problem, conjugate=False, sink=sink)
    return _quadratic_descent(cfg, problem, conjugate=False, sink=sink)


def solve_cg(cfg: SchemeConfig, problem, sink=None) -> SolveResult:
    """Linear conjugate gradient on the self-adjoint quadratic operator."""
    return _quadratic_descent(cfg, problem, conjugate=True, sink=sink)


def solve_nonlinear_cg(cfg: SchemeConfig, problem, sink=None) -> SolveResult:
    """Non-linear conjugate gradient with Fletcher-Reeves or Polak-Ribiere
    updates; the line search is exact for quadratic phases and a
    bracketing/bisection search on the directional derivative otherwise."""
    return _nonlinear_descent(cfg, problem, conjugate=True, sink=sink)


def _nonlinear_descent(cfg, problem, conjugate, sink=None) -> SolveResult:
    binding = _binding(cfg, problem)
    state = binding.initial(cfg.init)
    trace = _make_trace(cfg, binding, sink)

    feval = binding.evaluate(state)
    residual = tuple(g.like(-g.data) for g in binding.grads(feval))
    rr = binding.dot(residual, residual)
    row, extra = binding.row_from_eval(0, state, feval)
    trace.append(row, extra)
    criteria = _checked_stop(cfg, binding, row)
    if criteria:
        return _finish(cfg, binding, state, trace, 0, criteria)

    direction = tuple(r.copy() for r in residual)
    alpha_prev = 1.0
    for n in range(1, cfg.max_iter + 1):
        if binding.is_quadratic:
            t_dir, _ = binding.hess(direction)
            curvature = binding.dot(t_dir, direction)
            if curvature <= 0:
                raise SolverBreakdownError(
                    f"non-positive curvature {curvature:.3e} in the exact line search"
                )
            alpha = binding.dot(residual, direction) / curvature
        else:
            alpha = _line_search(binding, state, direction, feval, alpha_prev)
        alpha_prev = alpha
        state = binding.axpy(alpha, direction, state)

        feval = binding.evaluate(state)
        new_residual = tuple(g.like(-g.data) for g in binding.grads(feval))
        rr_new = binding.dot(new_residual, new_residual)
        if not conjugate:
            beta = 0.0
        elif cfg.beta_rule == BetaRule.FLETCHER_REEVES:
            beta = rr_new / rr if rr > 0 else 0.0
        else:
            mixed = rr_new - binding.dot(new_residual, residual)
            beta = max(mixed / rr, 0.0) if rr > 0 else 0.0
        direction = tuple(
            r.like(r.data + beta * d.data) for r, d in zip(new_residual, direction)
        )
        residual = new_residual
        rr = rr_new

        row, extra = binding.row_from_eval(n, state, feval)
        trace.append(row, extra)
        criteria = _checked_stop(cfg, binding, row)
        if criteria:
            return _finish(cfg, binding, state, trace, n, criteria)
    return _finish(cfg, binding, state, trace, cfg.max_iter, [])


def _line_search(binding, state, direction, feval, alpha_prev, max_bisect=40):
    """Bracketing plus bisection on the directional derivative.

    The derivative at 0 must be negative (descent direction); the bracket is
    grown geometrically until the derivative changes sign, then bisected to
    1e-10 relative width.  Failure to produce a decrease within the allowed
    bisection steps raises.
    """

    def slope(a):
        probe = binding.axpy(a, direction, state)
        fe = binding.evaluate(probe)
        return binding.dot(binding.grads(fe), direction), fe

    d0 = binding.dot(binding.grads(feval), direction)
    if d0 >= 0:
        raise LineSearchError(f"search direction is not a descent direction (slope {d0:.3e})")
    value0 = feval.value
    lo, hi = 0.0, max(alpha_prev, 1e-12)
    d_hi, fe_hi = slope(hi)
    grow = 0
    while d_hi < 0:
        lo = hi
        hi *= 2.0
        grow += 1
        if grow > 60:
            raise LineSearchError("bracketing failed: derivative never changed sign")
        d_hi, fe_hi = slope(hi)
    best = None
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        d_mid, fe_mid = slope(mid)
        if fe_mid.value < value0:
            best = mid
        if d_mid < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * max(hi, 1e-30):
            break
    alpha = 0.5 * (lo + hi)
    if best is None:
        probe = binding.axpy(alpha, direction, state)
        if binding.evaluate(probe).value >= value0:
            raise LineSearchError(
                f"no decrease within {max_bisect} bisection steps (start value {value0:.6e})"
            )
    return alpha


_SOLVERS = {
    Scheme.FIXED_STEP: solve_fixed_step,
    Scheme.OPTIMAL_STEP: solve_optimal_step,
    Scheme.CG: solve_cg,
    Scheme.NONLINEAR_CG: solve_nonlinear_cg,
}


def solve(cfg: SchemeConfig, problem, sink=None) -> SolveResult:
    """Dispatch one scheme configuration on a homogenization problem."""
    return _SOLVERS[cfg.scheme](cfg, problem, sink=sink)
