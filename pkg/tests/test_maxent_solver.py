"""
Tests for the numerical maximum-entropy dual solver.
"""

import dataclasses
import math

import numpy as np
import pytest

from mepack.errors import ConvergenceError, InfeasibleConstraintsError, InvalidParameterError
from mepack.maxent_solver import (
    MomentConstraints,
    check_decrements,
    discrete_entropy,
    entropy_maximality_witness,
    l1_distance_to_analytic,
    solve_dual,
)
from mepack.packets import PacketParams, classical_density, classical_entropy


@pytest.fixture(scope="module")
def standard_solution():
    """Dual solution for Q = P = 0, dQ = dP = 1 on the default 512 x 512 grid."""
    return solve_dual(MomentConstraints.from_params(PacketParams()))


class TestDualSolver:
    """Tests for REQ-MAX-001: damped Newton on the dual."""

    @pytest.mark.req("REQ-MAX-001")
    def test_standard_multipliers(self, standard_solution):
        """Verify lambda = (0, 1/2, 0, 1/2) within 1e-6."""
        np.testing.assert_allclose(standard_solution.multipliers, [0.0, 0.5, 0.0, 0.5], atol=1e-6)
        assert standard_solution.converged

    @pytest.mark.req("REQ-MAX-001")
    def test_residuals(self, standard_solution):
        """Verify all four moment residuals are below 1e-9."""
        assert np.max(np.abs(standard_solution.residuals)) < 1e-9

    @pytest.mark.req("REQ-MAX-001")
    def test_newton_decrements_shrink(self, standard_solution):
        """Verify the Newton decrement ends far below where it started."""
        decrements = standard_solution.decrements
        assert len(decrements) == standard_solution.iterations
        assert decrements[-1] < 1e-6
        assert decrements[-1] < decrements[0]

    @pytest.mark.req("REQ-MAX-001")
    def test_newton_decrements_monotone(self, standard_solution):
        """Verify the decrement never grows after the first damped step."""
        check_decrements(standard_solution.decrements, slack=1e-10)
        decrements = standard_solution.decrements[1:]
        assert all(b <= a + 1e-10 for a, b in zip(decrements, decrements[1:]))

    @pytest.mark.req("REQ-MAX-001")
    def test_growing_decrement_raises(self):
        """Verify a decrement that grows after the first step is a convergence failure."""
        check_decrements([0.2, 0.9, 0.4, 1e-3])
        with pytest.raises(ConvergenceError) as excinfo:
            check_decrements([0.9, 0.4, 0.5, 1e-3])
        assert excinfo.value.exit_code == 3
        assert excinfo.value.diagnostics["iteration"] == 3
        check_decrements([0.9, 1e-12, 2e-12], slack=1e-10)

    @pytest.mark.req("REQ-MAX-001")
    def test_translation_covariant(self):
        """Verify shifting Q shifts the solution mean by the same amount."""
        params = PacketParams(dQ=0.8, dP=1.5)
        base = solve_dual(MomentConstraints.from_params(params, 128))
        shifted = solve_dual(MomentConstraints.from_params(dataclasses.replace(params, Q=2.5), 128))
        mean = lambda s: float(np.sum(s.density.sum(axis=1) * s.q) * s.cell)
        assert mean(shifted) - mean(base) == pytest.approx(2.5, abs=1e-9)

    @pytest.mark.req("REQ-MAX-001")
    def test_displaced_multipliers(self):
        """Verify lambda1 = -Q / dQ^2 and lambda2 = 1 / 2dQ^2 for a displaced packet."""
        params = PacketParams(Q=1.0, P=-2.0, dQ=0.5, dP=2.0)
        solution = solve_dual(MomentConstraints.from_params(params, 256))
        expected = [-1.0 / 0.25, 0.5 / 0.25, 2.0 / 4.0, 0.5 / 4.0]
        np.testing.assert_allclose(solution.multipliers, expected, rtol=1e-6, atol=1e-6)

    @pytest.mark.req("REQ-MAX-001")
    def test_iteration_cap(self):
        """Verify the iteration cap raises ConvergenceError with diagnostics."""
        with pytest.raises(ConvergenceError) as excinfo:
            solve_dual(MomentConstraints.from_params(PacketParams(), 64), max_iter=1)
        assert excinfo.value.diagnostics["iterations"] == 1
        assert excinfo.value.exit_code == 3

    @pytest.mark.req("REQ-MAX-001")
    def test_infeasible_targets(self):
        """Verify <q^2> < <q>^2 is infeasible."""
        with pytest.raises(InfeasibleConstraintsError):
            MomentConstraints(mean_q=1.0, second_q=0.5, mean_p=0.0, second_p=1.0,
                              q_bounds=(-10.0, 10.0), p_bounds=(-10.0, 10.0))

    @pytest.mark.req("REQ-MAX-001")
    def test_grid_must_cover(self):
        """Verify a grid narrower than eight standard deviations is rejected."""
        with pytest.raises(InvalidParameterError):
            MomentConstraints(mean_q=0.0, second_q=1.0, mean_p=0.0, second_p=1.0,
                              q_bounds=(-4.0, 4.0), p_bounds=(-8.0, 8.0))


class TestAnalyticAgreement:
    """Tests for REQ-MAX-002: agreement with the closed-form packet."""

    @pytest.mark.req("REQ-MAX-002")
    def test_l1_distance_small(self, standard_solution):
        """Verify the L1 distance to the analytic density is below 1e-3."""
        assert l1_distance_to_analytic(standard_solution, PacketParams()) < 1e-3

    @pytest.mark.req("REQ-MAX-002")
    def test_l1_distance_of_analytic_is_zero(self, standard_solution):
        """Verify the analytic density is at distance zero from itself."""
        qq, pp = np.meshgrid(standard_solution.q, standard_solution.p, indexing="ij")
        analytic = dataclasses.replace(standard_solution,
                                       density=classical_density(PacketParams(), qq, pp))
        assert l1_distance_to_analytic(analytic, PacketParams()) == 0.0

    @pytest.mark.req("REQ-MAX-002")
    def test_coarse_grid_further(self, standard_solution):
        """Verify a 9 x 9 grid lands measurably further from the analytic density."""
        coarse = solve_dual(MomentConstraints.from_params(PacketParams(), 9))
        fine_distance = l1_distance_to_analytic(standard_solution, PacketParams())
        assert l1_distance_to_analytic(coarse, PacketParams()) > 10.0 * fine_distance

    @pytest.mark.req("REQ-MAX-002")
    def test_entropy_matches_closed_form(self, standard_solution):
        """Verify the discrete entropy approaches 1 + ln(2 pi dQ dP / v)."""
        assert standard_solution.entropy == pytest.approx(classical_entropy(PacketParams()), abs=1e-8)
        assert discrete_entropy(standard_solution.density, standard_solution.cell) == \
            standard_solution.entropy


class TestMaximalityWitness:
    """Tests for REQ-MAX-003: feasible perturbations never raise the entropy."""

    @pytest.mark.req("REQ-MAX-003")
    def test_witness_passes(self):
        """Verify 100 random feasible perturbations all lose entropy."""
        solution = solve_dual(MomentConstraints.from_params(PacketParams(Q=0.5, dP=2.0), 128))
        witness = entropy_maximality_witness(solution, n_trials=100, seed=3)
        assert witness.passed
        assert witness.trials == 100
        assert witness.max_entropy_gain < 0.0
        assert witness.max_constraint_error < 1e-10

    @pytest.mark.req("REQ-MAX-003")
    def test_witness_deterministic(self):
        """Verify the witness depends only on its seed."""
        solution = solve_dual(MomentConstraints.from_params(PacketParams(), 64))
        first = entropy_maximality_witness(solution, n_trials=10, seed=1)
        second = entropy_maximality_witness(solution, n_trials=10, seed=1)
        assert first == second

    @pytest.mark.req("REQ-MAX-003")
    @pytest.mark.slow
    def test_witness_full_grid(self, standard_solution):
        """Verify the witness on the full 512 x 512 grid."""
        assert entropy_maximality_witness(standard_solution, n_trials=100).passed
