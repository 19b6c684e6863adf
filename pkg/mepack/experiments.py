"""
Experiment drivers comparing classical, quantum and closed-form trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .classical_engine import estimate_escape_time, evolve_classical
from .errors import InvalidParameterError, NumericalDiagnosticError, UnsupportedPotentialError
from .packets import (
    PacketParams,
    classical_raw_moment,
    quantum_spectrum,
    spectral_position_density,
)
from .potentials import PolynomialPotential, characteristic_time, exact_trajectory
from .quantum_engine import run_quantum
from .trajectory import COMPONENTS, Trajectory

logger = logging.getLogger(__name__)

QUANTUM_TOLERANCE = 1e-6
MONTE_CARLO_SIGMAS = 5.0
SIGNIFICANCE = 3.0
RESOLUTION_FLOOR = 1e-11
SCAN_SPECTRUM_TOL = 1e-14
ESCAPE_SIGMAS = 12.0


# =========================================================================
# Quadratic coincidence
# =========================================================================

@dataclass
class CoincidenceReport:
    exact: Trajectory
    classical: Trajectory
    quantum: Trajectory
    quantum_deviation: dict[str, float]
    classical_z: dict[str, float]

    COLUMNS = (("t", "time"),) + tuple(
        (f"{engine}_{c}", "") for engine in ("exact", "classical", "quantum") for c in COMPONENTS)

    @property
    def quantum_ok(self) -> bool:
        return max(self.quantum_deviation.values()) < QUANTUM_TOLERANCE

    @property
    def classical_ok(self) -> bool:
        return max(self.classical_z.values()) <= MONTE_CARLO_SIGMAS

    def rows(self) -> list[list[float]]:
        rows = []
        for i, t in enumerate(self.exact.times):
            row = [float(t)]
            for track in (self.exact, self.classical, self.quantum):
                row.extend(track.state_at(i))
            rows.append(row)
        return rows

    def summary(self) -> dict:
        return {
            "quantum_max_deviation": self.quantum_deviation,
            "classical_max_z": self.classical_z,
            "quantum_ok": self.quantum_ok,
            "classical_ok": self.classical_ok,
            "passed": self.quantum_ok and self.classical_ok,
        }


def quadratic_coincidence(params: PacketParams, potential: PolynomialPotential, times, *,
                          n: int = 100_000, seed: int = 0, dt_classical: float | None = None,
                          dt_quantum: float | None = None, threads: int = 1) -> CoincidenceReport:
    """Run all three engines on a degree <= 2 potential and compare with the closed forms.

    Quantum deviations are normalized as in Trajectory.deviation_from; the
    classical ones are in units of the Monte Carlo standard error.
    """
    if potential.degree > 2:
        raise UnsupportedPotentialError("coincidence holds only for degree <= 2",
                                        {"degree": potential.degree})
    times = np.atleast_1d(np.asarray(times, dtype=float))
    exact = exact_trajectory(params, potential, times)
    classical = evolve_classical(params, potential, times, dt_classical, n, seed, threads=threads)
    quantum = run_quantum(params, potential, times, dt_quantum, threads=threads)

    quantum_dev = {c: float(np.max(v)) for c, v in quantum.deviation_from(exact).items()}
    classical_z = {}
    for i, c in enumerate(COMPONENTS):
        gap = np.abs(classical.component(c) - exact.component(c))
        classical_z[c] = float(np.max(gap / np.maximum(classical.stderr[i], 1e-300)))
    logger.info("coincidence: quantum max dev %.3g, classical max z %.3g",
                max(quantum_dev.values()), max(classical_z.values()))
    return CoincidenceReport(exact, classical, quantum, quantum_dev, classical_z)


# =========================================================================
# Classical-limit scan
# =========================================================================

@dataclass
class ScanPoint:
    """Quantum-classical differences at one scale and probe time."""

    scale: float
    nu: float
    t: float
    classical: tuple[float, float, float, float] | None = None
    quantum: tuple[float, float, float, float] | None = None
    relative: dict[str, float] = field(default_factory=dict)
    normalized: dict[str, float] = field(default_factory=dict)
    error: dict[str, float] = field(default_factory=dict)
    status: str = "ok"

    def significant(self, channel: str) -> bool:
        return self.status == "ok" and self.normalized[channel] >= SIGNIFICANCE * self.error[channel]


@dataclass
class LimitScanReport:
    scales: list[float]
    probe_times: list[float]
    potential: list[float]
    points: list[ScanPoint]

    COLUMNS = (("scale", ""), ("nu", ""), ("t", "time"), ("status", "")) + tuple(
        col for c in COMPONENTS for col in (
            (f"{c}_classical", ""), (f"{c}_quantum", ""), (f"{c}_relative", ""),
            (f"{c}_normalized", ""), (f"{c}_error", ""), (f"{c}_significant", "")))

    def series(self, t: float) -> list[ScanPoint]:
        return [pt for pt in self.points if pt.t == t and pt.status == "ok"]

    def monotone(self, channel: str, t: float) -> bool:
        values = [pt.normalized[channel] for pt in self.series(t)]
        return len(values) == len(self.scales) and all(b < a for a, b in zip(values, values[1:]))

    def all_significant(self, channel: str, t: float) -> bool:
        pts = self.series(t)
        return len(pts) == len(self.scales) and all(pt.significant(channel) for pt in pts)

    def any_significant(self) -> bool:
        return any(pt.significant(c) for pt in self.points for c in COMPONENTS)

    def verdict(self, channel: str, t: float) -> str:
        """Classify one channel at one probe time.

        ``aborted`` when any scale failed, ``below_resolution`` when some gap
        is not resolved against its error, ``not_monotone`` when resolved
        gaps fail to shrink, else ``supported``.
        """
        if len(self.series(t)) < len(self.scales):
            return "aborted"
        if not self.all_significant(channel, t):
            return "below_resolution"
        if not self.monotone(channel, t):
            return "not_monotone"
        return "supported"

    def rows(self) -> list[list]:
        rows = []
        for pt in self.points:
            row = [pt.scale, pt.nu, pt.t, pt.status]
            for i, c in enumerate(COMPONENTS):
                if pt.status != "ok":
                    row.extend([None] * 6)
                    continue
                row.extend([pt.classical[i], pt.quantum[i], pt.relative[c],
                            pt.normalized[c], pt.error[c], pt.significant(c)])
            rows.append(row)
        return rows

    def summary(self) -> dict:
        channels = {}
        for t in self.probe_times:
            for c in COMPONENTS:
                channels[f"{c}@t={t:g}"] = {
                    "monotone_decrease": self.monotone(c, t),
                    "all_significant": self.all_significant(c, t),
                    "verdict": self.verdict(c, t),
                }
        # the limit is judged on the mean position alone
        q_verdict = {f"{t:g}": self.verdict("Q", t) for t in self.probe_times}
        supported = "supported" in q_verdict.values()
        quadratic = len(self.potential) <= 3
        return {
            "channels": channels,
            "q_verdict": q_verdict,
            "aborted_points": sum(pt.status != "ok" for pt in self.points),
            "any_significant": self.any_significant(),
            "limit_supported": supported,
            "passed": (not self.any_significant()) if quadratic else supported,
        }


def _scan_runs(params, potential, times, dt, quadrature_order, threads):
    classical = evolve_classical(params, potential, times, dt, method="quadrature",
                                 quadrature_order=quadrature_order, scheme="velocity",
                                 threads=threads)
    quantum = run_quantum(params, potential, times, dt, tol=SCAN_SPECTRUM_TOL, threads=threads)
    return classical, quantum


def default_probe_times(base: PacketParams, potential: PolynomialPotential, scales) -> list[float]:
    """Half the earliest classical escape time of the broadest packet."""
    widest = base.scaled(max(scales))
    horizon = 10.0 * characteristic_time(base, potential)
    bound = abs(base.Q) + ESCAPE_SIGMAS * widest.dQ
    t_escape = estimate_escape_time(widest, potential, bound, horizon)
    if math.isinf(t_escape):
        return [characteristic_time(base, potential)]
    logger.warning("probe time set to half the escape time %.6g", t_escape)
    return [0.5 * t_escape]


def limit_scan(base: PacketParams, potential: PolynomialPotential, probe_times=None,
               scales=(1.0, 2.0, 4.0, 8.0), *, dt: float = 0.01, quadrature_order: int = 48,
               threads: int = 1) -> LimitScanReport:
    """Quantum-classical differences of the packet scaled by each ``s``.

    Both engines share the kick-drift-kick splitting, with step ``dt / s`` at
    scale ``s`` so the splitting error falls with the packet width instead of
    growing with it. The error estimate of a channel is the step-halving
    change of the difference, plus the change with a lower quadrature order,
    plus a relative floor.
    """
    scales = [float(s) for s in scales]
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise InvalidParameterError("scales must be strictly ascending", {"scales": scales})
    if probe_times is None:
        probe_times = default_probe_times(base, potential, scales)
    times = np.sort(np.atleast_1d(np.asarray(probe_times, dtype=float)))
    points: list[ScanPoint] = []
    for s in scales:
        params = base.scaled(s)
        step = dt / s
        logger.info("limit scan: s=%g nu=%.6g dt=%.6g", s, params.nu, step)
        try:
            classical, quantum = _scan_runs(params, potential, times, step, quadrature_order,
                                            threads)
            classical_half, quantum_half = _scan_runs(params, potential, times, 0.5 * step,
                                                      quadrature_order, threads)
            classical_low = evolve_classical(params, potential, times, step, method="quadrature",
                                             quadrature_order=quadrature_order // 2 + 8,
                                             scheme="velocity", threads=threads)
        except NumericalDiagnosticError as exc:
            logger.warning("scale %g aborted: %s", s, exc)
            points.extend(ScanPoint(s, params.nu, float(t), status=f"aborted: {exc.message}")
                          for t in times)
            continue
        for i, t in enumerate(times):
            point = ScanPoint(s, params.nu, float(t),
                              classical=classical.state_at(i), quantum=quantum.state_at(i))
            spreads = {"Q": classical.dQ[i], "P": classical.dP[i],
                       "dQ": classical.dQ[i], "dP": classical.dP[i]}
            for c in COMPONENTS:
                xc, xq = classical.component(c)[i], quantum.component(c)[i]
                scale = spreads[c]
                gap = xq - xc
                half_gap = quantum_half.component(c)[i] - classical_half.component(c)[i]
                quad_err = abs(classical.component(c)[i] - classical_low.component(c)[i])
                floor = RESOLUTION_FLOOR * max(abs(xc), scale)
                point.relative[c] = gap / xc if xc != 0.0 else math.nan
                point.normalized[c] = abs(gap) / scale
                point.error[c] = (abs(gap - half_gap) + quad_err + floor) / scale
            points.append(point)
    report = LimitScanReport(scales, times.tolist(), list(potential.coeffs), points)
    logger.info("limit scan done: %s", report.summary()["passed"])
    return report


# =========================================================================
# Sixth moment
# =========================================================================

@dataclass(frozen=True)
class MomentComparison:
    Q: float
    dQ: float
    nu: float
    classical: float
    corrected: float
    quadrature: float

    COLUMNS = (("Q", "length"), ("dQ", "length"), ("nu", ""), ("classical", "length^6"),
               ("corrected", "length^6"), ("quadrature", "length^6"),
               ("quadrature_vs_classical", ""), ("quadrature_vs_corrected", ""), ("matches", ""))

    @property
    def quadrature_vs_classical(self) -> float:
        return abs(self.quadrature - self.classical) / abs(self.classical)

    @property
    def quadrature_vs_corrected(self) -> float:
        return abs(self.quadrature - self.corrected) / abs(self.corrected)

    @property
    def matches(self) -> str:
        """Which closed form the grid quadrature agrees with to 1e-6."""
        hits = [name for name, gap in (("classical", self.quadrature_vs_classical),
                                       ("corrected", self.quadrature_vs_corrected)) if gap < 1e-6]
        return "+".join(hits) or "neither"

    def rows(self) -> list[list]:
        return [[self.Q, self.dQ, self.nu, self.classical, self.corrected, self.quadrature,
                 self.quadrature_vs_classical, self.quadrature_vs_corrected, self.matches]]

    def summary(self) -> dict:
        return {name: row for (name, _), row in zip(self.COLUMNS, self.rows()[0])}


def sixth_moment_quadrature(params: PacketParams, tol: float = 1e-10) -> float:
    """<q^6> of the quantum packet by streaming its position density on a fine grid."""
    spectrum = quantum_spectrum(params, tol)
    reach = math.sqrt(2 * spectrum.n_max + 1)
    ell = spectrum.length_scale
    half_width = max(12.0 * params.dQ, ell * (reach + 10.0))
    dq = min(params.dQ / 64.0, ell / (reach + 1.0))
    n_points = math.ceil(2.0 * half_width / dq)
    q = params.Q - half_width + (np.arange(n_points) + 0.5) * (2.0 * half_width / n_points)
    density = spectral_position_density(spectrum, q)
    return float(np.sum(density * q ** 6) * (2.0 * half_width / n_points))


def cubic_moment_check(params: PacketParams, tol: float = 1e-10) -> MomentComparison:
    """Compare <q^6> from the classical form, the corrected form and the grid."""
    nu = params.nu
    classical = classical_raw_moment(params, 6)
    corrected = classical + 9.0 * params.dQ ** 6 / nu - 3.0 * params.dQ ** 6 / nu ** 3
    result = MomentComparison(params.Q, params.dQ, nu, classical, corrected,
                              sixth_moment_quadrature(params, tol))
    logger.info("<q^6>: classical=%.12g corrected=%.12g quadrature=%.12g (%s)",
                classical, corrected, result.quadrature, result.matches)
    return result
