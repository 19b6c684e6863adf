"""
Tests for the classical ensemble engine.

Quadratic potentials are checked against the closed forms; integrator
properties (reversibility, energy drift order, determinism) are checked
directly on the leapfrog kernel.
"""

import math

import numpy as np
import pytest

from mepack.classical_engine import (
    MIN_SAMPLES,
    ensemble_energy,
    ensemble_energy_drift,
    estimate_escape_time,
    evolve_classical,
    integrate_ensemble,
    moment_match,
)
from mepack.errors import (
    EnsembleEscapeError,
    IntegratorInstabilityError,
    InvalidParameterError,
    NumericalDiagnosticError,
)
from mepack.packets import SAMPLE_BLOCK, PacketParams, sample_classical
from mepack.potentials import PolynomialPotential, exact_trajectory


class TestClassicalEvolution:
    """Tests for REQ-CLS-001: moments of the evolved classical ensemble."""

    @pytest.mark.req("REQ-CLS-001")
    def test_harmonic_full_period(self, displaced_packet, harmonic):
        """Verify the packet returns to its initial state after t = 2 pi."""
        trajectory = evolve_classical(displaced_packet, harmonic, [2.0 * math.pi], n=20_000, seed=1)
        stderr = trajectory.stderr[:, 0]
        assert abs(trajectory.Q[0] - 1.0) < 5.0 * stderr[0]
        assert abs(trajectory.P[0]) < 5.0 * stderr[1]
        assert abs(trajectory.dQ[0] - 1.0) < 5.0 * stderr[2]

    @pytest.mark.req("REQ-CLS-001")
    def test_free_particle(self, free):
        """Verify Q = 2 and dQ = sqrt(5) at t = 2 for P = dQ = dP = 1."""
        trajectory = evolve_classical(PacketParams(P=1.0), free, [2.0], dt=0.01, n=20_000)
        stderr = trajectory.stderr[:, 0]
        assert abs(trajectory.Q[0] - 2.0) < 5.0 * stderr[0]
        assert abs(trajectory.dQ[0] - math.sqrt(5.0)) < 5.0 * stderr[2]

    @pytest.mark.req("REQ-CLS-001")
    def test_free_momentum_conserved_bitwise(self, free):
        """Verify V = 0 leaves every momentum untouched."""
        trajectory = evolve_classical(PacketParams(P=0.3), free, [0.0, 1.0], dt=0.01, n=5000)
        assert trajectory.P[1] == trajectory.P[0]
        assert trajectory.dP[1] == trajectory.dP[0]

    @pytest.mark.req("REQ-CLS-001")
    def test_initial_moments_matched(self, cubic):
        """Verify moment matching reproduces the packet coordinates at t = 0 and drops the errors."""
        params = PacketParams(Q=0.5, P=-1.0, dQ=0.3, dP=2.0)
        trajectory = evolve_classical(params, cubic, [0.0], n=MIN_SAMPLES, moment_matching=True)
        assert trajectory.state_at(0) == pytest.approx((0.5, -1.0, 0.3, 2.0), abs=1e-12)
        assert trajectory.stderr is None
        assert trajectory.meta["moment_matching"]

    @pytest.mark.req("REQ-CLS-001")
    def test_default_ensemble_unmatched(self, cubic):
        """Verify a default Monte Carlo run keeps i.i.d. samples and reports their errors."""
        params = PacketParams(Q=0.5, P=-1.0, dQ=0.3, dP=2.0)
        trajectory = evolve_classical(params, cubic, [0.0], n=MIN_SAMPLES)
        assert not trajectory.meta["moment_matching"]
        assert trajectory.stderr is not None
        assert trajectory.Q[0] != pytest.approx(0.5, abs=1e-12)
        assert abs(trajectory.Q[0] - 0.5) < 5.0 * trajectory.stderr[0, 0]

    @pytest.mark.req("REQ-CLS-001")
    def test_quadrature_matches_closed_form(self, harmonic):
        """Verify the quadrature ensemble tracks the exact trajectory."""
        params = PacketParams(Q=1.0, P=0.5, dQ=0.7, dP=1.3)
        times = np.linspace(0.0, 3.0, 7)
        trajectory = evolve_classical(params, harmonic, times, dt=1e-3, method="quadrature")
        exact = exact_trajectory(params, harmonic, times)
        deviation = trajectory.deviation_from(exact)
        assert max(float(np.max(d)) for d in deviation.values()) < 1e-6
        assert trajectory.stderr is None
        assert trajectory.meta["method"] == "quadrature"

    @pytest.mark.req("REQ-CLS-001")
    def test_statistical_error_shrinks_as_root_n(self, free):
        """Verify a 16-fold larger ensemble shrinks the error about 4-fold."""
        params = PacketParams(P=1.0)

        def rms_error(n):
            errors = [
                evolve_classical(params, free, [1.0], dt=0.1, n=n, seed=seed,
                                 moment_matching=False).Q[0] - 1.0
                for seed in range(40)
            ]
            return math.sqrt(np.mean(np.square(errors)))

        ratio = rms_error(MIN_SAMPLES) / rms_error(16 * MIN_SAMPLES)
        assert 2.0 < ratio < 8.0

    @pytest.mark.req("REQ-CLS-001")
    def test_rejects_small_ensembles(self, unit_packet, harmonic):
        """Verify fewer than the minimum number of samples is rejected."""
        with pytest.raises(InvalidParameterError):
            evolve_classical(unit_packet, harmonic, [1.0], n=MIN_SAMPLES - 1)

    @pytest.mark.req("REQ-CLS-001")
    def test_rejects_unknown_scheme(self, unit_packet, harmonic):
        """Verify unknown integration schemes are rejected."""
        with pytest.raises(InvalidParameterError):
            evolve_classical(unit_packet, harmonic, [1.0], scheme="euler")


class TestLeapfrog:
    """Tests for REQ-CLS-002: symplectic leapfrog integration."""

    @pytest.mark.req("REQ-CLS-002")
    @pytest.mark.parametrize("scheme", ["position", "velocity"])
    def test_time_reversible(self, harmonic, scheme):
        """Verify integrating forward, flipping p and integrating back recovers the start."""
        q0, p0 = sample_classical(PacketParams(Q=0.5), 2000, seed=2)
        q, p = q0.copy(), p0.copy()
        integrate_ensemble(q, p, harmonic, 5000, 1e-3, scheme)
        p *= -1.0
        integrate_ensemble(q, p, harmonic, 5000, 1e-3, scheme)
        np.testing.assert_allclose(q, q0, atol=1e-8)
        np.testing.assert_allclose(-p, p0, atol=1e-8)

    @pytest.mark.req("REQ-CLS-002")
    def test_energy_drift_small(self, harmonic):
        """Verify relative energy drift below 1e-6 for dt = 1e-3 over t = 10."""
        q, p = sample_classical(PacketParams(), 10_000, seed=4)
        before = ensemble_energy(harmonic, q, p)
        integrate_ensemble(q, p, harmonic, 10_000, 1e-3)
        assert ensemble_energy_drift(before, ensemble_energy(harmonic, q, p)) < 1e-6

    @pytest.mark.req("REQ-CLS-002")
    def test_energy_drift_second_order(self, harmonic):
        """Verify halving dt shrinks the drift about fourfold."""
        drifts = []
        for n_steps, h in ((1000, 1e-2), (2000, 5e-3)):
            q, p = sample_classical(PacketParams(), 5000, seed=4)
            before = ensemble_energy(harmonic, q, p)
            integrate_ensemble(q, p, harmonic, n_steps, h)
            drifts.append(ensemble_energy_drift(before, ensemble_energy(harmonic, q, p)))
        assert 3.0 < drifts[0] / drifts[1] < 5.0

    @pytest.mark.req("REQ-CLS-002")
    def test_zero_drift_for_identical_snapshots(self):
        """Verify identical snapshots give zero drift and non-finite ones infinity."""
        energies = np.array([1.0, 2.0, 0.0])
        assert ensemble_energy_drift(energies, energies) == 0.0
        assert math.isinf(ensemble_energy_drift(energies, np.array([1.0, np.nan, 0.0])))

    @pytest.mark.req("REQ-CLS-002")
    def test_escaping_cubic_drift(self):
        """Verify a runaway cubic trajectory with a coarse step breaks the drift bound."""
        potential = PolynomialPotential((0.0, 0.0, 0.0, 6.0))
        q = np.array([-5.0, 0.1])
        p = np.array([-5.0, 0.0])
        before = ensemble_energy(potential, q, p)
        with np.errstate(all="ignore"):
            integrate_ensemble(q, p, potential, 20, 0.1)
            drift = ensemble_energy_drift(before, ensemble_energy(potential, q, p))
        assert drift > 1e-3

    @pytest.mark.req("REQ-CLS-002")
    def test_moment_match_exact(self):
        """Verify matched ensembles carry the exact target mean and covariance."""
        params = PacketParams(Q=-2.0, P=3.0, dQ=0.5, dP=4.0)
        q, p = sample_classical(params, 3000, seed=9)
        weights = np.full(q.size, 1.0 / q.size)
        q, p = moment_match(params, q, p, weights)
        cov = np.cov(np.vstack([q, p]), bias=True)
        assert q.mean() == pytest.approx(params.Q, abs=1e-12)
        assert p.mean() == pytest.approx(params.P, abs=1e-12)
        np.testing.assert_allclose(cov, np.diag([0.25, 16.0]), atol=1e-10)


class TestDeterminism:
    """Tests for REQ-CLS-003: reproducible, thread-independent ensembles."""

    @pytest.mark.req("REQ-CLS-003")
    def test_same_seed_same_result(self, unit_packet, cubic):
        """Verify identical inputs produce bitwise identical trajectories."""
        first = evolve_classical(unit_packet, cubic, [0.2, 0.4], dt=0.01, n=4000, seed=12)
        second = evolve_classical(unit_packet, cubic, [0.2, 0.4], dt=0.01, n=4000, seed=12)
        for name in ("Q", "P", "dQ", "dP"):
            np.testing.assert_array_equal(first.component(name), second.component(name))

    @pytest.mark.req("REQ-CLS-003")
    def test_thread_count_independent(self, unit_packet, harmonic):
        """Verify results are bitwise identical for one and four worker threads."""
        n = 2 * SAMPLE_BLOCK + 5
        single = evolve_classical(unit_packet, harmonic, [0.1], dt=0.01, n=n, threads=1)
        pooled = evolve_classical(unit_packet, harmonic, [0.1], dt=0.01, n=n, threads=4)
        for name in ("Q", "P", "dQ", "dP"):
            np.testing.assert_array_equal(single.component(name), pooled.component(name))


class TestDiagnostics:
    """Tests for REQ-CLS-004: escape and instability diagnostics."""

    @pytest.mark.req("REQ-CLS-004")
    def test_escape_detected(self):
        """Verify nodes leaving the escape bound raise EnsembleEscapeError."""
        potential = PolynomialPotential((0.0, 0.0, 0.0, 6.0))
        with np.errstate(all="ignore"), pytest.raises(EnsembleEscapeError) as excinfo:
            evolve_classical(PacketParams(), potential, [0.5, 1.0, 2.0, 3.0],
                             method="quadrature", escape_bound=50.0)
        assert excinfo.value.exit_code == 3

    @pytest.mark.req("REQ-CLS-004")
    def test_instability_detected(self, unit_packet, harmonic):
        """Verify a step near the stability limit raises IntegratorInstabilityError."""
        with pytest.raises(IntegratorInstabilityError) as excinfo:
            evolve_classical(unit_packet, harmonic, [19.0], dt=1.9, method="quadrature")
        assert isinstance(excinfo.value, NumericalDiagnosticError)
        assert excinfo.value.diagnostics["drift"] > 1e-3

    @pytest.mark.req("REQ-CLS-004")
    def test_escape_time_bound(self, unit_packet, harmonic):
        """Verify no escape in a confining well and a finite escape time for a cubic."""
        assert math.isinf(estimate_escape_time(unit_packet, harmonic, 20.0, 10.0, dt=0.01))
        potential = PolynomialPotential((0.0, 0.0, 0.0, 6.0))
        with np.errstate(all="ignore"):
            t_escape = estimate_escape_time(unit_packet, potential, 20.0, 5.0, dt=0.001)
        assert 0.0 < t_escape < 5.0
