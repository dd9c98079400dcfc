"""Solver schemes: convergence, monotonicity, stopping and equivalences."""

import numpy as np
import pytest

from shom import (
    Grid,
    PhaseMap,
    Physics,
    PowerLawPotential,
    QuadraticPotential,
    StiffnessField,
    TensorField,
    build_problem,
    check_stop,
    default_reference,
    effective_from_strain,
    eval_energy,
    eval_equilibrium_gap,
    make_benchmark,
    solve,
    solve_cg,
    solve_fixed_step,
)
from shom.homogenize import laminate_exact_conductivity
from shom.solvers import (
    BetaRule,
    Scheme,
    SchemeConfig,
    SolverDivergenceError,
    StopCriterion,
    leff_label,
)

BAR = np.array([1.0, 0.0])


class TestSchemeConfig:
    def test_fixed_step_only_with_energy(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme=Scheme.FIXED_STEP, functional="twofield")

    def test_tolerances_positive(self):
        with pytest.raises(ValueError):
            SchemeConfig(tol_grad=0.0)
        with pytest.raises(ValueError):
            SchemeConfig(tol_value=-1.0)

    def test_unknown_functional(self):
        with pytest.raises(ValueError):
            SchemeConfig(functional="momentum")


class TestDefaultReference:
    def test_strain_schemes_use_arithmetic_mean(self):
        phases = make_benchmark("obnosov", Grid((8, 8)), contrast=100.0)
        ref = default_reference(phases, "energy")
        assert ref.matrix[0, 0] == pytest.approx(50.5)

    def test_two_field_uses_geometric_mean(self):
        phases = make_benchmark("obnosov", Grid((8, 8)), contrast=100.0)
        ref = default_reference(phases, "twofield")
        assert ref.matrix[0, 0] == pytest.approx(10.0)


class TestCheckStop:
    def test_exact_solution_fires_all_criteria(self):
        cfg = SchemeConfig(functional="twofield")
        fired = check_stop(cfg, "twofield", grad_norm=0.0, value=0.0,
                           load_norm_e=1.0, value_scale=0.5)
        assert StopCriterion.GRADIENT in fired and StopCriterion.VALUE in fired

    def test_energy_has_no_value_criterion(self):
        cfg = SchemeConfig(functional="energy")
        fired = check_stop(cfg, "energy", grad_norm=1.0, value=0.0,
                           load_norm_e=1.0, value_scale=0.5)
        assert fired == []

    def test_value_criterion_normalization(self):
        # fires iff value <= tol_value * (reference energy of the load)
        cfg = SchemeConfig(functional="twofield", tol_value=1e-10)
        scale = 7.0
        at = check_stop(cfg, "twofield", 1.0, 1e-10 * scale * 0.99, 1.0, scale)
        above = check_stop(cfg, "twofield", 1.0, 1e-10 * scale * 1.01, 1.0, scale)
        assert StopCriterion.VALUE in at
        assert StopCriterion.VALUE not in above

    def test_first_obnosov_iterate_fires_nothing(self):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=100.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.FIXED_STEP, functional="energy", max_iter=1,
                         tol_grad=1e-8),
            problem,
        )
        assert result.n_iter == 1 and not result.converged


class TestFixedStep:
    def test_homogeneous_converges_at_iteration_zero(self):
        phases = make_benchmark("homogeneous", Grid((16, 16)), matrix_modulus=3.0)
        problem = build_problem(phases, BAR)
        result = solve_fixed_step(SchemeConfig(scheme=Scheme.FIXED_STEP), problem)
        assert result.n_iter == 0 and result.converged
        assert effective_from_strain(problem, result.state[0]) == pytest.approx(3.0)

    def test_laminate_matches_mixing_rule(self):
        phases = make_benchmark("laminate", Grid((64, 64)), contrast=10.0)
        exact = laminate_exact_conductivity([1.0, 10.0], [0.5, 0.5], 0, 2)
        problem = build_problem(phases, BAR)
        result = solve_fixed_step(
            SchemeConfig(scheme=Scheme.FIXED_STEP, tol_grad=1e-12, max_iter=2000), problem
        )
        q = effective_from_strain(problem, result.state[0])
        assert abs(q - exact[0, 0]) < 1e-10

    def test_update_is_the_classical_fixed_point(self):
        # one fixed step from any iterate subtracts exactly the operator image
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=5.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.FIXED_STEP, functional="energy", max_iter=1,
                         tol_grad=1e-30),
            problem,
        )
        zero = TensorField.zeros(Grid((16, 16)), Physics.CONDUCTIVITY)
        feval = eval_energy(zero, BAR, phases, problem.green)
        assert np.array_equal(result.state[0].data, -feval.grad_e.data)

    def test_divergent_reference_raises(self):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=100.0)
        problem = build_problem(
            phases, BAR, reference=StiffnessField.isotropic_conductivity(2, 2.0)
        )
        with pytest.raises(SolverDivergenceError):
            solve_fixed_step(SchemeConfig(scheme=Scheme.FIXED_STEP, max_iter=500), problem)


class TestOptimalStep:
    def test_identity_operator_converges_in_one_step(self, rng):
        # homogeneous medium at the reference: the quadratic operator is the
        # identity on the compatible subspace, so one exact step lands on the
        # minimizer from any start
        grid = Grid((16, 16))
        phases = make_benchmark("homogeneous", grid, matrix_modulus=2.0)
        problem = build_problem(
            phases, BAR, reference=StiffnessField.isotropic_conductivity(2, 2.0)
        )
        from shom import Subspace
        from conftest import random_field

        start = problem.green.project(
            random_field(grid, Physics.CONDUCTIVITY, rng), Subspace.COMPATIBLE
        )
        cfg = SchemeConfig(scheme=Scheme.OPTIMAL_STEP, functional="energy",
                           init=(start,), tol_grad=1e-12)
        result = solve(cfg, problem)
        assert result.n_iter == 1
        assert np.abs(result.state[0].data).max() < 1e-12

    def test_laminate_one_step_matches_hand_minimizer(self):
        # single spectral cluster: the first exact step solves the problem,
        # and the minimizer is the classical series mixing field
        grid = Grid((32, 32))
        phases = make_benchmark("laminate", grid, contrast=10.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.OPTIMAL_STEP, functional="energy", tol_grad=1e-12),
            problem,
        )
        harmonic = 1.0 / (0.5 / 1.0 + 0.5 / 10.0)
        moduli = np.where(phases.ids == 0, 1.0, 10.0)
        hand = np.zeros(grid.dims + (2,))
        hand[..., 0] = harmonic / moduli - 1.0
        assert result.n_iter == 1
        assert np.abs(result.state[0].data - hand).max() < 1e-12

    @pytest.mark.parametrize("functional", ["energy", "equilibrium", "twofield"])
    def test_monotone_decrease(self, functional):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=30.0)
        problem = build_problem(phases, BAR, functional=functional)
        cfg = SchemeConfig(scheme=Scheme.OPTIMAL_STEP, functional=functional,
                           tol_grad=1e-6, max_iter=3000)
        result = solve(cfg, problem)
        values = result.trace.column("value")
        diffs = np.diff(values)
        assert np.all(diffs <= 1e-13 * np.maximum(np.abs(values[:-1]), 1e-30))


class TestConjugateGradient:
    def test_homogeneous_zero_iterations(self):
        phases = make_benchmark("homogeneous", Grid((16, 16)), matrix_modulus=2.0)
        problem = build_problem(phases, BAR)
        result = solve_cg(SchemeConfig(scheme=Scheme.CG), problem)
        assert result.n_iter == 0 and result.converged

    def test_laminate_converges_in_few_iterations(self):
        phases = make_benchmark("laminate", Grid((64, 64)), contrast=10.0)
        problem = build_problem(phases, BAR)
        result = solve_cg(SchemeConfig(scheme=Scheme.CG, tol_grad=1e-11), problem)
        assert result.n_iter <= 3 and result.converged

    def test_matches_fixed_step_value_on_obnosov(self):
        phases = make_benchmark("obnosov", Grid((32, 32)), contrast=100.0)
        problem = build_problem(phases, BAR)
        fixed = solve(
            SchemeConfig(scheme=Scheme.FIXED_STEP, functional="energy",
                         tol_grad=1e-10, max_iter=4000),
            problem,
        )
        conj = solve_cg(SchemeConfig(scheme=Scheme.CG, tol_grad=1e-10), problem)
        q_fixed = effective_from_strain(problem, fixed.state[0])
        q_cg = effective_from_strain(problem, conj.state[0])
        assert abs(q_fixed - q_cg) < 1e-8
        assert conj.n_iter < fixed.n_iter

    @pytest.mark.parametrize("functional", ["energy", "equilibrium", "twofield"])
    def test_monotone_values(self, functional):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=30.0)
        problem = build_problem(phases, BAR, functional=functional)
        result = solve_cg(
            SchemeConfig(scheme=Scheme.CG, functional=functional, tol_grad=1e-9,
                         max_iter=2000),
            problem,
        )
        values = result.trace.column("value")
        assert np.all(np.diff(values) <= 1e-13 * np.maximum(np.abs(values[:-1]), 1e-30))

    def test_initialization_independence(self, rng):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=25.0)
        problem = build_problem(phases, BAR)
        delta = 1e-10
        cfg = SchemeConfig(scheme=Scheme.CG, tol_grad=delta, max_iter=3000)
        res_zero = solve_cg(cfg, problem)
        from shom import Subspace
        from conftest import random_field

        start = problem.green.project(
            random_field(Grid((16, 16)), Physics.CONDUCTIVITY, rng), Subspace.COMPATIBLE
        )
        res_rand = solve_cg(
            SchemeConfig(scheme=Scheme.CG, tol_grad=delta, max_iter=3000, init=(start,)),
            problem,
        )
        q0 = effective_from_strain(problem, res_zero.state[0])
        q1 = effective_from_strain(problem, res_rand.state[0])
        assert abs(q0 - q1) <= 10 * delta * max(abs(q0), 1.0)


class TestNonlinearCG:
    def test_tracks_linear_cg_with_quadratic_phases(self):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=10.0)
        problem = build_problem(phases, BAR)
        for k in (2, 8, 20):
            lin = solve(
                SchemeConfig(scheme=Scheme.CG, tol_grad=1e-30, max_iter=k), problem
            )
            non = solve(
                SchemeConfig(scheme=Scheme.NONLINEAR_CG, tol_grad=1e-30, max_iter=k,
                             beta_rule=BetaRule.FLETCHER_REEVES),
                problem,
            )
            scale = max(np.abs(lin.state[0].data).max(), 1e-30)
            assert np.abs(lin.state[0].data - non.state[0].data).max() < 1e-10 * scale

    def test_polak_ribiere_converges(self):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=10.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.NONLINEAR_CG, beta_rule=BetaRule.POLAK_RIBIERE,
                         tol_grad=1e-9, max_iter=500),
            problem,
        )
        assert result.converged

    def test_power_law_demonstrator_monotone_to_value_tolerance(self):
        grid = Grid((32, 32))
        ids = make_benchmark("obnosov", grid, contrast=2.0).ids
        table = {
            0: QuadraticPotential.isotropic(Physics.CONDUCTIVITY, 2, 1.0),
            1: PowerLawPotential(2.0, 3.0),
        }
        phases = PhaseMap(grid, Physics.CONDUCTIVITY, ids, table)
        problem = build_problem(
            phases, BAR, reference=StiffnessField.isotropic_conductivity(2, 1.5)
        )
        cfg = SchemeConfig(scheme=Scheme.NONLINEAR_CG, functional="twofield",
                           tol_grad=1e-8, tol_value=1e-12, max_iter=800)
        result = solve(cfg, problem)
        assert result.converged
        values = result.trace.column("value")
        assert np.all(np.diff(values) <= 1e-12 * np.maximum(values[:-1], 1e-30))

    def test_zero_contrast_nonlinear_immediate_convergence(self):
        grid = Grid((16, 16))
        pot = PowerLawPotential(2.0, 3.0)
        phases = PhaseMap(grid, Physics.CONDUCTIVITY,
                          np.zeros(grid.dims, dtype=np.int64), {0: pot})
        problem = build_problem(
            phases, BAR, reference=StiffnessField.isotropic_conductivity(2, 2.0)
        )
        eta0 = TensorField.uniform(grid, Physics.CONDUCTIVITY, BAR)
        tau0 = TensorField.uniform(grid, Physics.CONDUCTIVITY, pot.grad(BAR))
        cfg = SchemeConfig(scheme=Scheme.NONLINEAR_CG, functional="twofield",
                           init=(tau0, eta0), tol_grad=1e-10)
        result = solve(cfg, problem)
        assert result.n_iter == 0 and result.converged


class TestDescentCoupling:
    def test_small_steps_along_either_gradient_decrease_both(self, rng):
        # short explicit-step walks realize the mutual-descent property
        phases = make_benchmark("obnosov", Grid((8, 8)), contrast=6.0)
        problem = build_problem(phases, BAR)
        green = problem.green
        from shom import Subspace
        from conftest import random_field

        for _ in range(5):
            e = green.project(
                random_field(Grid((8, 8)), Physics.CONDUCTIVITY, rng), Subspace.COMPATIBLE
            )
            j0 = eval_energy(e, BAR, phases, green).value
            n0 = eval_equilibrium_gap(e, BAR, phases, green).value
            step = 1e-3
            g_gap = eval_equilibrium_gap(e, BAR, phases, green).grad_e
            e_after = e.like(e.data - step * g_gap.data)
            assert eval_energy(e_after, BAR, phases, green, check=False).value < j0
            g_energy = eval_energy(e, BAR, phases, green).grad_e
            e_after = e.like(e.data - step * g_energy.data)
            assert eval_equilibrium_gap(e_after, BAR, phases, green, check=False).value < n0


class TestTrace:
    def test_csv_columns_and_streaming(self, tmp_path):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=4.0)
        problem = build_problem(phases, BAR)
        streamed = []
        result = solve(
            SchemeConfig(scheme=Scheme.CG, tol_grad=1e-9), problem, sink=streamed.append
        )
        assert len(streamed) == len(result.trace.rows)
        path = tmp_path / "trace.csv"
        result.trace.write_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "n,value,grad_norm,d_compat,d_const,d_equil,div_norm,Leff_11"
        assert len(path.read_text().splitlines()) == len(streamed) + 1

    def test_leff_label(self):
        assert leff_label([1.0, 0.0]) == "Leff_11"
        assert leff_label([0.0, 2.0]) == "Leff_22"
        assert leff_label([1.0, 1.0]) == "Leff_load"

    def test_strain_scheme_rows_sit_on_the_static_axis(self):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=4.0)
        problem = build_problem(phases, BAR)
        result = solve(
            SchemeConfig(scheme=Scheme.FIXED_STEP, functional="energy", tol_grad=1e-9,
                         max_iter=500),
            problem,
        )
        assert np.all(result.trace.column("d_compat") == 0.0)
        assert np.all(result.trace.column("d_const") == 0.0)
        assert np.all(result.trace.column("d_equil")[:-1] > 0.0)

    def test_two_field_rows_sum_to_value(self):
        phases = make_benchmark("obnosov", Grid((16, 16)), contrast=4.0)
        problem = build_problem(phases, BAR, functional="twofield")
        result = solve(
            SchemeConfig(scheme=Scheme.CG, functional="twofield", tol_grad=1e-9),
            problem,
        )
        total = (
            result.trace.column("d_compat")
            + result.trace.column("d_const")
            + result.trace.column("d_equil")
        )
        values = result.trace.column("value")
        assert np.abs(total - values).max() <= 1e-12 * np.abs(values).max()
