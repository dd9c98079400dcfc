"""Cost functionals over the energetic Hilbert spaces and their gradients.

Four functionals drive the solvers and diagnostics:

* ``energy``            -- strain-based potential energy of a trial strain
  fluctuation (its gradient is the Green operator applied to the trial
  stress, so a fixed unit step reproduces the classical fixed point);
* ``complementary``     -- stress-based complementary energy over admissible
  stresses under a controlled mean strain;
* ``equilibrium_gap``   -- squared energetic norm of the energy gradient,
  i.e. the distance of the trial stress from static admissibility;
* ``twofield``          -- unconstrained two-field error, the sum of
  kinematic, constitutive and static admissibility defects.

Every evaluation returns value, gradient(s) and the diagnostic norms in a
single pass over the transforms, which is what the per-iteration trace
recording relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constitutive import PhaseMap
from .fields import (
    MacroscopicLoad,
    TensorField,
    average,
    dot_dual,
    dot_strain,
    norm_strain,
    norm_stress,
)
from .green import GreenOperator, Subspace

ADMISSIBILITY_RTOL = 1e-10


class PreconditionError(ValueError):
    """Raised when an input field violates a functional's admissibility."""


@dataclass
class FunctionalEval:
    """Value and gradient(s) of one functional at a given iterate."""

    value: float
    grad_e: TensorField = None
    grad_s: TensorField = None
    parts: tuple = None          # (compat, const, equil) for the two-field error
    grad_norm: float = 0.0       # gradient norm in the functional's own metric
    stress: TensorField = None   # trial stress behind the divergence diagnostic
    div_norm: float = None
    adm_energy: tuple = None     # (energy, complementary) of admissible parts
    extra: dict = field(default_factory=dict)


def _load_vector(load, green) -> np.ndarray:
    if isinstance(load, MacroscopicLoad):
        if load.physics != green.physics:
            raise PreconditionError("load physics does not match the problem")
        vec = load.value
    else:
        vec = np.asarray(load, dtype=float).reshape(-1)
    m = green.reference.ncomp
    if vec.shape != (m,):
        raise PreconditionError(f"load must have {m} components")
    return vec


def _uniform_norm_e(vec, green) -> float:
    return float(np.sqrt(vec @ green.reference.matrix @ vec))


def check_zero_mean(e_star: TensorField, green: GreenOperator, what="strain fluctuation"):
    mean = average(e_star)
    drift = _uniform_norm_e(mean, green)
    scale = norm_strain(e_star, green.reference)
    if drift > ADMISSIBILITY_RTOL * max(scale, 1.0):
        raise PreconditionError(
            f"{what} must have zero mean: |<field>| = {drift:.3e} "
            f"exceeds {ADMISSIBILITY_RTOL:.0e} * max(|field|, 1)"
        )


def eval_energy(e_star, load, phases, green, check=True) -> FunctionalEval:
    """Potential energy of the strain ``load + e_star`` and its gradient.

    The gradient lives in the compatible zero-mean subspace and is the
    strain Green's operator applied to the trial stress.
    """
    if check:
        check_zero_mean(e_star, green)
    bar = _load_vector(load, green)
    strain = e_star.like(e_star.data + bar)
    stress = phases.apply_field(strain)
    value = 0.5 * dot_dual(stress, strain)
    grad, div_norm = green.apply_strain(stress, with_div_norm=True)
    return FunctionalEval(
        value=value,
        grad_e=grad,
        grad_norm=norm_strain(grad, green.reference),
        stress=stress,
        div_norm=div_norm,
    )


def eval_equilibrium_gap(e_star, load, phases, green, check=True) -> FunctionalEval:
    """Half the squared energetic norm of the energy gradient, and its gradient."""
    if check:
        check_zero_mean(e_star, green)
    bar = _load_vector(load, green)
    strain = e_star.like(e_star.data + bar)
    stress = phases.apply_field(strain)
    inner, div_norm = green.apply_strain(stress, with_div_norm=True)
    value = 0.5 * dot_strain(inner, inner, green.reference)
    grad = green.apply_strain(phases.apply_field(inner))
    return FunctionalEval(
        value=value,
        grad_e=grad,
        grad_norm=norm_strain(grad, green.reference),
        stress=stress,
        div_norm=div_norm,
        extra={"energy_grad": inner},
    )


def eval_complementary(stress, load, phases, green, check=True) -> FunctionalEval:
    """Complementary energy of an admissible trial stress and its gradient.

    The gradient formula projects onto the admissible-stress space by
    construction, so the returned direction stays admissible to round-off.
    """
    bar = _load_vector(load, green)
    if check:
        sperp = green.project(stress, Subspace.EQUIL_ORTH)
        drift = norm_stress(sperp, green.reference)
        scale = norm_stress(stress, green.reference)
        if drift > ADMISSIBILITY_RTOL * max(scale, 1.0):
            raise PreconditionError(
                f"trial stress is not statically admissible: "
                f"|P_orth s| = {drift:.3e} for |s| = {scale:.3e}"
            )
    l0 = green.reference.matrix
    compliance_strain = phases.apply_inverse_field(stress)
    value = 0.5 * dot_dual(stress, compliance_strain) - float(average(stress) @ bar)
    lifted = stress.like(compliance_strain.data @ l0)
    grad = stress.like(lifted.data - green.apply_strain(lifted).data @ l0 - bar @ l0)
    return FunctionalEval(
        value=value,
        grad_s=grad,
        grad_norm=norm_stress(grad, green.reference),
        stress=stress,
    )


def eval_twofield(stress, strain, load, phases, green) -> FunctionalEval:
    """Two-field admissibility error, its parts and both partial gradients.

    Non-linear phases enter through the potential interface: the material
    term swaps the compliance/stiffness applications for the dual/primal
    potential gradients.
    """
    bar = _load_vector(load, green)
    l0 = green.reference.matrix
    l0_inv = green.reference.inverse_matrix

    gamma_stress, div_norm = green.apply_strain(stress, with_div_norm=True)
    sperp = gamma_stress.data @ l0                      # static defect, stress space
    compat_e0 = green.apply_strain(strain.like(strain.data @ l0))
    compat_resid = strain.data - compat_e0.data - bar   # kinematic defect, strain space

    equil = 0.5 * dot_strain(gamma_stress, gamma_stress, green.reference)
    compat = 0.5 * float(
        np.einsum("...i,...i->...", compat_resid @ l0, compat_resid).mean()
    )
    _, const = phases.constitutive_error(stress, strain)
    parts = (compat, const, equil)

    grad_s = stress.like(
        (phases.grad_dual_potential(stress).data - strain.data) @ l0 + sperp
    )
    grad_e = strain.like(
        (phases.grad_potential(strain).data - stress.data) @ l0_inv + compat_resid
    )
    grad_norm = float(
        np.sqrt(
            norm_stress(grad_s, green.reference) ** 2
            + norm_strain(grad_e, green.reference) ** 2
        )
    )

    adm_stress = stress.like(stress.data - sperp)
    adm_e0 = compat_e0
    adm_energy = (
        _energy_of_admissible(adm_e0, bar, phases),
        _complementary_of_admissible(adm_stress, bar, phases),
    )
    return FunctionalEval(
        value=float(sum(parts)),
        grad_s=grad_s,
        grad_e=grad_e,
        parts=parts,
        grad_norm=grad_norm,
        stress=stress,
        div_norm=div_norm,
        adm_energy=adm_energy,
        extra={"adm_stress": adm_stress, "adm_strain_fluct": adm_e0},
    )


def _energy_of_admissible(e0, bar, phases):
    strain = e0.like(e0.data + bar)
    if phases.is_quadratic:
        return 0.5 * dot_dual(phases.apply_field(strain), strain)
    return float(phases.potential_value(strain).mean())


def _complementary_of_admissible(adm_stress, bar, phases):
    loading = float(average(adm_stress) @ bar)
    if phases.is_quadratic:
        compliance = phases.apply_inverse_field(adm_stress)
        return 0.5 * dot_dual(adm_stress, compliance) - loading
    return float(phases.dual_potential_value(adm_stress).mean()) - loading


# -- quadratic-structure (Hessian) applications for the linear solvers ---------


def energy_hessian(p: TensorField, phases: PhaseMap, green: GreenOperator):
    """T p for the energy functional restricted to compatible fluctuations.

    Returns the image plus the trial-stress increment ``L p``, which the
    solvers track so per-iteration diagnostics need no reapplication.
    """
    stress_dir = phases.apply_field(p)
    tp = green.apply_strain(stress_dir)
    return tp, {"stress_dir": stress_dir}


def equilibrium_gap_hessian(p, phases, green):
    """T p for the equilibrium gap, with the tracked increments alongside."""
    stress_dir = phases.apply_field(p)
    inner = green.apply_strain(stress_dir)
    tp = green.apply_strain(phases.apply_field(inner))
    return tp, {"stress_dir": stress_dir, "energy_grad_dir": inner}


def twofield_hessian(p_stress, p_strain, phases, green):
    """Linear part of the two-field gradient applied to a direction pair.

    Also returns the static/kinematic defect increments of the direction,
    which the solvers track to update per-iterate trace parts without extra
    transforms.
    """
    l0 = green.reference.matrix
    l0_inv = green.reference.inverse_matrix
    sperp = green.apply_strain(p_stress).data @ l0
    compat_e0 = green.apply_strain(p_strain.like(p_strain.data @ l0))
    compat_resid = p_strain.data - compat_e0.data
    tp_s = p_stress.like(
        (phases.apply_inverse(p_stress.data) - p_strain.data) @ l0 + sperp
    )
    tp_e = p_strain.like(
        (phases.apply(p_strain.data) - p_stress.data) @ l0_inv + compat_resid
    )
    return (tp_s, tp_e), (sperp, compat_resid)


def prop_bound_constant(phases: PhaseMap, green: GreenOperator) -> float:
    """Upper-bound constant for the admissible-energy vs two-field-error bound.

    Derived from the metric equivalence between the heterogeneous and the
    reference weightings plus the triangle inequality, whence the factor 2:
    ``c = 2 * max(1, lam_max(L0^-1 L), lam_max(L^-1 L0))`` over phases.
    The constant is a computable surrogate (the underlying result is purely
    existential) and is reported, never assumed.
    """
    half = green.reference.sqrt_matrix
    inv_half = green.reference.inverse_sqrt_matrix
    worst = 1.0
    for ph in phases.quadratic_phases().values():
        strain_ratio = np.linalg.eigvalsh(inv_half @ ph.matrix @ inv_half)[-1]
        stress_ratio = np.linalg.eigvalsh(half @ ph.inverse @ half)[-1]
        worst = max(worst, float(strain_ratio), float(stress_ratio))
    return 2.0 * worst
