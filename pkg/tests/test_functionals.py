"""Functional values, gradients against finite differences, and the
admissible-trajectory identities."""

import numpy as np
import pytest

from shom import (
    Grid,
    PhaseMap,
    Physics,
    QuadraticPotential,
    Subspace,
    TensorField,
    build_problem,
    dot_strain,
    dot_stress,
    eval_complementary,
    eval_energy,
    eval_equilibrium_gap,
    eval_twofield,
    make_benchmark,
    prop_bound_constant,
    solve,
)
from shom.functionals import PreconditionError
from shom.solvers import Scheme, SchemeConfig

from conftest import random_field

BAR = np.array([1.0, 0.0])


@pytest.fixture
def setup(grid8):
    phases = make_benchmark("obnosov", grid8, contrast=7.0)
    problem = build_problem(phases, BAR)
    return phases, problem.green


def compatible(green, rng):
    return green.project(random_field(green.grid, green.physics, rng), Subspace.COMPATIBLE)


def admissible_stress(green, rng, uniform=(0.6, -0.2)):
    s = green.project(random_field(green.grid, green.physics, rng), Subspace.EQUILIBRATED)
    s.data += np.asarray(uniform)
    return s


def central_difference(value_fn, h=1e-5):
    return (value_fn(h) - value_fn(-h)) / (2.0 * h)


class TestEnergy:
    def test_zero_fluctuation_value_is_mean_stiffness_energy(self, setup, grid8):
        phases, green = setup
        zero = TensorField.zeros(grid8, Physics.CONDUCTIVITY)
        fe = eval_energy(zero, BAR, phases, green)
        mean_modulus = sum(
            frac * phases.table[pid].matrix[0, 0]
            for pid, frac in phases.volume_fractions().items()
        )
        assert fe.value == pytest.approx(0.5 * mean_modulus, rel=1e-13)

    def test_homogeneous_reference_is_stationary_at_zero(self, grid8):
        phases = make_benchmark("homogeneous", grid8, matrix_modulus=2.0)
        problem = build_problem(phases, BAR, reference=None)
        zero = TensorField.zeros(grid8, Physics.CONDUCTIVITY)
        fe = eval_energy(zero, BAR, phases, problem.green)
        assert fe.grad_norm < 1e-14

    def test_nonzero_mean_rejected(self, setup, grid8):
        phases, green = setup
        bad = TensorField.uniform(grid8, Physics.CONDUCTIVITY, [1.0, 0.0])
        with pytest.raises(PreconditionError):
            eval_energy(bad, BAR, phases, green)

    def test_gradient_against_finite_differences(self, setup, rng):
        phases, green = setup
        e0 = compatible(green, rng)
        fe = eval_energy(e0, BAR, phases, green)
        for _ in range(10):
            d = compatible(green, rng)
            fd = central_difference(
                lambda h: eval_energy(
                    e0.like(e0.data + h * d.data), BAR, phases, green, check=False
                ).value
            )
            assert fd == pytest.approx(dot_strain(fe.grad_e, d, green.reference), rel=1e-6)


class TestEquilibriumGap:
    def test_value_is_half_squared_energy_gradient(self, setup, rng):
        phases, green = setup
        e0 = compatible(green, rng)
        gap = eval_equilibrium_gap(e0, BAR, phases, green)
        energy = eval_energy(e0, BAR, phases, green)
        assert gap.value == pytest.approx(0.5 * energy.grad_norm**2, rel=1e-13)

    def test_homogeneous_zero_at_origin(self, grid8):
        phases = make_benchmark("homogeneous", grid8, matrix_modulus=3.0)
        problem = build_problem(phases, BAR)
        zero = TensorField.zeros(grid8, Physics.CONDUCTIVITY)
        assert eval_equilibrium_gap(zero, BAR, phases, problem.green).value < 1e-15

    def test_descent_coupling_with_energy(self, setup, rng):
        phases, green = setup
        for _ in range(20):
            e0 = compatible(green, rng)
            fj = eval_energy(e0, BAR, phases, green)
            fn = eval_equilibrium_gap(e0, BAR, phases, green)
            assert dot_strain(fj.grad_e, fn.grad_e, green.reference) > 0

    def test_gradient_against_finite_differences(self, setup, rng):
        phases, green = setup
        e0 = compatible(green, rng)
        fe = eval_equilibrium_gap(e0, BAR, phases, green)
        for _ in range(10):
            d = compatible(green, rng)
            fd = central_difference(
                lambda h: eval_equilibrium_gap(
                    e0.like(e0.data + h * d.data), BAR, phases, green, check=False
                ).value
            )
            assert fd == pytest.approx(dot_strain(fe.grad_e, d, green.reference), rel=1e-6)


class TestComplementary:
    def test_zero_stress(self, setup, grid8):
        phases, green = setup
        zero = TensorField.zeros(grid8, Physics.CONDUCTIVITY)
        fe = eval_complementary(zero, BAR, phases, green)
        assert fe.value == 0.0
        expected = -BAR @ green.reference.matrix
        assert np.abs(fe.grad_s.data - expected).max() < 1e-14

    def test_inadmissible_stress_rejected(self, setup, rng):
        phases, green = setup
        with pytest.raises(PreconditionError):
            eval_complementary(
                random_field(green.grid, green.physics, rng), BAR, phases, green
            )

    def test_gradient_stays_admissible(self, setup, rng):
        phases, green = setup
        s = admissible_stress(green, rng)
        fe = eval_complementary(s, BAR, phases, green)
        drift = green.project(fe.grad_s, Subspace.EQUIL_ORTH)
        assert np.abs(drift.data).max() < 1e-12 * max(np.abs(fe.grad_s.data).max(), 1.0)

    def test_gradient_against_finite_differences(self, setup, rng):
        phases, green = setup
        s = admissible_stress(green, rng)
        fe = eval_complementary(s, BAR, phases, green)
        for _ in range(10):
            d = admissible_stress(green, rng, uniform=np.random.default_rng(3).standard_normal(2))
            fd = central_difference(
                lambda h: eval_complementary(
                    s.like(s.data + h * d.data), BAR, phases, green, check=False
                ).value
            )
            assert fd == pytest.approx(dot_stress(fe.grad_s, d, green.reference), rel=1e-6)

    def test_duality_with_energy_at_the_solution(self, grid8):
        phases = make_benchmark("obnosov", grid8, contrast=20.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.CG, functional="energy", tol_grad=1e-13), problem
        )
        e_star = result.state[0]
        sigma = phases.apply_field(e_star.like(e_star.data + BAR))
        energy = eval_energy(e_star, BAR, phases, problem.green)
        comp = eval_complementary(sigma, BAR, phases, problem.green)
        assert comp.value == pytest.approx(-energy.value, rel=1e-10)


class TestTwoField:
    def test_exact_solution_is_the_global_zero(self, grid8):
        phases = make_benchmark("obnosov", grid8, contrast=12.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.CG, functional="energy", tol_grad=1e-13), problem
        )
        e_star = result.state[0]
        strain = e_star.like(e_star.data + BAR)
        stress = phases.apply_field(strain)
        fe = eval_twofield(stress, strain, BAR, phases, problem.green)
        assert fe.value < 1e-24
        assert fe.grad_norm < 1e-11

    def test_admissible_pair_value_is_the_material_error(self, setup, rng):
        phases, green = setup
        e0 = compatible(green, rng)
        strain = e0.like(e0.data + BAR)
        stress = admissible_stress(green, rng)
        fe = eval_twofield(stress, strain, BAR, phases, green)
        _, mean_err = phases.constitutive_error(stress, strain)
        assert fe.value == pytest.approx(mean_err, rel=1e-12)
        assert fe.parts[0] < 1e-13 and fe.parts[2] < 1e-13

    def test_parts_sum_to_value(self, setup, rng):
        phases, green = setup
        fe = eval_twofield(
            random_field(green.grid, green.physics, rng),
            random_field(green.grid, green.physics, rng),
            BAR, phases, green,
        )
        assert fe.value == sum(fe.parts)
        assert fe.value >= 0

    def test_partial_gradients_against_finite_differences(self, setup, rng):
        phases, green = setup
        tau = random_field(green.grid, green.physics, rng)
        eta = random_field(green.grid, green.physics, rng)
        fe = eval_twofield(tau, eta, BAR, phases, green)
        for _ in range(10):
            dt = random_field(green.grid, green.physics, rng)
            de = random_field(green.grid, green.physics, rng)
            fd_t = central_difference(
                lambda h: eval_twofield(
                    tau.like(tau.data + h * dt.data), eta, BAR, phases, green
                ).value
            )
            fd_e = central_difference(
                lambda h: eval_twofield(
                    tau, eta.like(eta.data + h * de.data), BAR, phases, green
                ).value
            )
            assert fd_t == pytest.approx(dot_stress(fe.grad_s, dt, green.reference), rel=1e-6)
            assert fd_e == pytest.approx(dot_strain(fe.grad_e, de, green.reference), rel=1e-6)


class TestTrajectoryIdentities:
    """The four closed-form values along admissible trajectories."""

    def test_all_four(self, setup, rng):
        phases, green = setup
        for _ in range(5):
            e0 = compatible(green, rng)
            e = e0.like(e0.data + BAR)
            s = admissible_stress(green, rng)
            r_mean = phases.constitutive_error(s, e)[1]
            g_energy = eval_energy(e0, BAR, phases, green).grad_norm
            g_comp = eval_complementary(s, BAR, phases, green).grad_norm

            p1 = eval_twofield(s, e, BAR, phases, green).value
            assert p1 == pytest.approx(r_mean, rel=1e-10)

            stress_of_e = phases.apply_field(e)
            p2 = eval_twofield(stress_of_e, e, BAR, phases, green).value
            assert p2 == pytest.approx(0.5 * g_energy**2, rel=1e-10)

            strain_of_s = phases.apply_inverse_field(s)
            p3 = eval_twofield(s, strain_of_s, BAR, phases, green).value
            assert p3 == pytest.approx(0.5 * g_comp**2, rel=1e-10)

            p4 = eval_twofield(stress_of_e, strain_of_s, BAR, phases, green).value
            assert p4 == pytest.approx(
                0.5 * g_comp**2 + r_mean + 0.5 * g_energy**2, rel=1e-10
            )


class TestAdmissibleEnergyBound:
    def test_bound_constant_and_inequality(self, setup, rng):
        phases, green = setup
        c = prop_bound_constant(phases, green)
        assert c >= 2.0
        for _ in range(30):
            tau = random_field(green.grid, green.physics, rng)
            eta = random_field(green.grid, green.physics, rng)
            fe = eval_twofield(tau, eta, BAR, phases, green)
            total = sum(fe.adm_energy)
            assert total >= -1e-12
            assert total <= c * fe.value * (1 + 1e-12)

    def test_total_energy_identity_for_admissible_parts(self, setup, rng):
        # for admissible fields the positive material error equals the total
        # mechanical energy of the pair
        phases, green = setup
        e0 = compatible(green, rng)
        s = admissible_stress(green, rng)
        fe = eval_twofield(s, e0.like(e0.data + BAR), BAR, phases, green)
        r_mean = phases.constitutive_error(s, e0.like(e0.data + BAR))[1]
        assert sum(fe.adm_energy) == pytest.approx(r_mean, rel=1e-10)


class TestOptimalityChain:
    def test_two_field_minimizer_satisfies_all_three_equations(self, grid8):
        phases = make_benchmark("obnosov", grid8, contrast=10.0)
        problem = build_problem(phases, BAR, functional="twofield")
        result = solve(
            SchemeConfig(scheme=Scheme.CG, functional="twofield",
                         tol_grad=1e-10, tol_value=1e-22, max_iter=4000),
            problem,
        )
        stress, strain = result.state
        law_resid = stress.data - phases.apply(strain.data)
        law_scale = np.abs(phases.apply(strain.data)).max()
        assert np.abs(law_resid).max() / law_scale < 1e-6
        fe = eval_twofield(stress, strain, BAR, phases, problem.green)
        assert fe.parts[0] < 1e-14 and fe.parts[2] < 1e-14

    def test_energy_minimizer_solves_the_fixed_point_equation(self, grid8):
        # stationarity of the energy is the classical integral equation:
        # strain + Green(contrast-stress applied to strain) = load
        phases = make_benchmark("obnosov", grid8, contrast=10.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.CG, functional="energy", tol_grad=1e-13), problem
        )
        strain = result.state[0].like(result.state[0].data + BAR)
        contrast_stress = phases.apply(strain.data) - strain.data @ problem.green.reference.matrix
        residual = (
            strain.data
            + problem.green.apply_strain(strain.like(contrast_stress)).data
            - BAR
        )
        assert np.abs(residual).max() < 1e-11
