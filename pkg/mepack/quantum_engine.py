"""
Quantum ME packet dynamics on a position grid.

The packet is held as its spectral mixture: one complex amplitude array per
retained eigenfunction, each carrying its constant geometric weight. Every
branch is advanced by the same Strang split-operator step

    exp(-i V h / 2 hbar) . F^-1 exp(-i p^2 h / 2 mu hbar) F . exp(-i V h / 2 hbar)

and observables are weight-averaged over branches.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .classical_engine import evolve_classical
from .errors import (
    GridCoverageError,
    GridLeakageError,
    InvalidParameterError,
    SpectrumTruncationError,
)
from .io import atomic_write_bytes
from .packets import DEFAULT_SPECTRUM_TOL, PacketParams, QuantumSpectral, quantum_spectrum
from .potentials import PolynomialPotential, characteristic_time, exact_trajectory
from .trajectory import Trajectory, step_schedule

logger = logging.getLogger(__name__)

MIN_POINTS = 256
MAX_POINTS = 2 ** 20
MAX_STATE_ELEMENTS = 2 ** 27
EDGE_FRACTION = 0.05
LEAKAGE_TOLERANCE = 1e-6
COVERAGE_SIGMAS = 8.0
STEPS_PER_CHARACTERISTIC_TIME = 2000
BRANCH_BLOCK = 64
MAX_MOMENT_ORDER = 12
MOMENT_TAIL_TOLERANCE = 1e-8


# =========================================================================
# Grid
# =========================================================================

@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic position grid of ``n_points`` cells on [q_min, q_max)."""

    q_min: float
    q_max: float
    n_points: int

    def __post_init__(self):
        n = int(self.n_points)
        if n < MIN_POINTS or n & (n - 1):
            raise InvalidParameterError(
                f"grid size must be a power of two >= {MIN_POINTS}", {"n_points": n})
        if not self.q_max > self.q_min:
            raise InvalidParameterError("grid needs q_max > q_min",
                                        {"q_min": self.q_min, "q_max": self.q_max})
        object.__setattr__(self, "n_points", n)

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_points

    @property
    def points(self) -> np.ndarray:
        return self.q_min + self.dq * np.arange(self.n_points)

    def momenta(self, hbar: float) -> np.ndarray:
        """Momentum of each FFT bin, in FFT order."""
        return 2.0 * math.pi * hbar * np.fft.fftfreq(self.n_points, self.dq)

    def max_momentum(self, hbar: float) -> float:
        return math.pi * hbar / self.dq

    def check_coverage(self, q_lo: float, q_hi: float, p_bound: float, hbar: float) -> None:
        """Raise GridCoverageError unless [q_lo, q_hi] and |p| <= p_bound fit."""
        if self.q_min > q_lo or self.q_max < q_hi:
            raise GridCoverageError(
                "position grid does not span the packet envelope",
                {"q_min": self.q_min, "q_max": self.q_max, "need_lo": q_lo, "need_hi": q_hi})
        if self.dq > math.pi * hbar / p_bound:
            raise GridCoverageError(
                "grid too coarse for the packet momenta",
                {"dq": self.dq, "p_bound": p_bound, "p_max": self.max_momentum(hbar)})

    @classmethod
    def for_packet(cls, q_lo: float, q_hi: float, p_bound: float, hbar: float,
                   min_points: int = MIN_POINTS, max_points: int = MAX_POINTS) -> "GridSpec":
        """Smallest power-of-two grid covering the envelope with the edge bands
        left empty for the leakage monitor."""
        if not (q_hi > q_lo and p_bound > 0):
            raise InvalidParameterError("empty packet envelope",
                                        {"q_lo": q_lo, "q_hi": q_hi, "p_bound": p_bound})
        pad = 0.5 * (q_hi - q_lo) * (1.0 / (1.0 - 2.0 * EDGE_FRACTION) - 1.0)
        q_min, q_max = q_lo - pad, q_hi + pad
        dq_needed = (1.0 - EDGE_FRACTION) * math.pi * hbar / p_bound
        cells = math.ceil((q_max - q_min) / dq_needed)
        n_points = max(min_points, 1 << max(0, cells - 1).bit_length())
        if n_points > max_points:
            raise GridCoverageError(
                "packet envelope needs more grid points than allowed",
                {"needed": n_points, "max_points": max_points})
        return cls(q_min, q_max, n_points)


def _spread_factors(spectrum: QuantumSpectral) -> tuple[float, float]:
    """Envelope half-widths at t = 0, in units of dQ and dP."""
    params = spectrum.params
    reach = math.sqrt(2 * spectrum.n_max + 1) + COVERAGE_SIGMAS
    ell = spectrum.length_scale
    kq = max(COVERAGE_SIGMAS, ell * reach / params.dQ)
    kp = max(COVERAGE_SIGMAS, params.hbar / ell * reach / params.dP)
    return kq, kp


def packet_envelope(spectrum: QuantumSpectral, potential: PolynomialPotential | None = None,
                    times=None, dt: float | None = None) -> tuple[float, float, float]:
    """(q_lo, q_hi, p_bound) the grid must cover over ``times``.

    Degree <= 2 uses the closed forms; higher degrees use a deterministic
    classical pilot run with a 25% margin on the spreads.
    """
    params = spectrum.params
    kq, kp = _spread_factors(spectrum)
    if potential is None or times is None:
        return (params.Q - kq * params.dQ, params.Q + kq * params.dQ,
                abs(params.P) + kp * params.dP)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if potential.degree <= 2:
        track = exact_trajectory(params, potential, np.concatenate([[0.0], times]))
        margin = 1.0
    else:
        track = evolve_classical(params, potential, np.concatenate([[0.0], times]), dt=dt,
                                 method="quadrature", quadrature_order=24,
                                 scheme="velocity", drift_tolerance=None)
        margin = 1.25
    q_lo = float(np.min(track.Q - margin * kq * track.dQ))
    q_hi = float(np.max(track.Q + margin * kq * track.dQ))
    p_bound = float(np.max(np.abs(track.P) + margin * kp * track.dP))
    return q_lo, q_hi, p_bound


# =========================================================================
# Mixed state
# =========================================================================

@dataclass
class MixedStateGrid:
    """Weighted pure branches sampled on a grid."""

    grid: GridSpec
    weights: np.ndarray
    branches: np.ndarray = field(repr=False)
    hbar: float
    params: PacketParams | None = None

    @property
    def n_branches(self) -> int:
        return self.branches.shape[0]

    @property
    def trace(self) -> float:
        return float(np.sum(self.weights))

    def copy(self) -> "MixedStateGrid":
        return MixedStateGrid(self.grid, self.weights.copy(), self.branches.copy(),
                              self.hbar, self.params)


def build_state(params: PacketParams, grid: GridSpec | None = None,
                tol: float = DEFAULT_SPECTRUM_TOL) -> MixedStateGrid:
    """Sample every retained eigenfunction of the quantum packet on ``grid``.

    Without a grid the smallest one covering the packet at t = 0 is used.
    """
    spectrum = quantum_spectrum(params, tol)
    if grid is None:
        grid = GridSpec.for_packet(*packet_envelope(spectrum), params.hbar)
    else:
        kq, kp = _spread_factors(spectrum)
        grid.check_coverage(params.Q - kq * params.dQ, params.Q + kq * params.dQ,
                            abs(params.P) + kp * params.dP, params.hbar)
    size = spectrum.weights.size * grid.n_points
    if size > MAX_STATE_ELEMENTS:
        raise SpectrumTruncationError(
            "mixture too large to hold on the grid; use the streamed density instead",
            {"branches": spectrum.weights.size, "points": grid.n_points, "cap": MAX_STATE_ELEMENTS})
    branches = spectrum.eigenfunctions(grid.points)
    norms = np.sqrt(np.sum(np.abs(branches) ** 2, axis=1) * grid.dq)
    branches /= norms[:, None]
    logger.info("quantum state: nu=%.6g, %d branches on %d points", params.nu,
                branches.shape[0], grid.n_points)
    return MixedStateGrid(grid=grid, weights=spectrum.weights.copy(), branches=branches,
                          hbar=params.hbar, params=params)


def branch_norms(state: MixedStateGrid) -> np.ndarray:
    return np.sum(np.abs(state.branches) ** 2, axis=1) * state.grid.dq


def position_density(state: MixedStateGrid) -> np.ndarray:
    """Mixture density sum_n w_n |psi_n|^2 / trace on the grid."""
    return (state.weights @ np.abs(state.branches) ** 2) / state.trace


# =========================================================================
# Observables
# =========================================================================

def _momentum_probabilities(state: MixedStateGrid, workers: int = 1) -> np.ndarray:
    spectrum = np.abs(scipy.fft.fft(state.branches, axis=1, workers=workers)) ** 2
    return spectrum / spectrum.sum(axis=1, keepdims=True)


def _mixture_moments(weights: np.ndarray, probs: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Mean and variance of the mixture; per-branch rows of ``probs`` sum to 1."""
    w = weights / weights.sum()
    means = probs @ x
    within = np.sum(probs * (x[None, :] - means[:, None]) ** 2, axis=1)
    mean = float(w @ means)
    return mean, float(w @ within + w @ (means - mean) ** 2)


def observables(state: MixedStateGrid, workers: int = 1) -> tuple[float, float, float, float]:
    """(Q, P, dQ, dP) of the mixture; momenta from the FFT spectrum."""
    grid = state.grid
    pos = np.abs(state.branches) ** 2
    pos /= pos.sum(axis=1, keepdims=True)
    Q, var_q = _mixture_moments(state.weights, pos, grid.points)
    P, var_p = _mixture_moments(state.weights, _momentum_probabilities(state, workers),
                                grid.momenta(state.hbar))
    return Q, P, math.sqrt(var_q), math.sqrt(var_p)


def moment_tail_estimate(state: MixedStateGrid, k: int) -> float:
    """Contribution of the outer edge bands to <q^k>."""
    grid = state.grid
    band = max(1, int(EDGE_FRACTION * grid.n_points))
    q = grid.points
    density = position_density(state)
    tails = np.concatenate([density[:band] * np.abs(q[:band]) ** k,
                            density[-band:] * np.abs(q[-band:]) ** k])
    return float(np.sum(tails) * grid.dq)


def quantum_polynomial_moment(state: MixedStateGrid, k: int) -> float:
    """<q^k> of the mixture by grid quadrature."""
    if not 0 <= k <= MAX_MOMENT_ORDER:
        raise InvalidParameterError(f"moment order must lie in [0, {MAX_MOMENT_ORDER}]", {"k": k})
    grid = state.grid
    value = float(np.sum(position_density(state) * grid.points ** k) * grid.dq)
    tail = moment_tail_estimate(state, k)
    if tail > MOMENT_TAIL_TOLERANCE * max(abs(value), 1.0):
        logger.warning("<q^%d> tail estimate %.3g above tolerance; widen the grid", k, tail)
    return value


def edge_leakage(state: MixedStateGrid, workers: int = 1) -> tuple[float, float]:
    """Mixture probability in the outer position and momentum bands."""
    w = state.weights / state.trace
    band = max(1, int(EDGE_FRACTION * state.grid.n_points))
    pos = np.abs(state.branches) ** 2 * state.grid.dq
    q_leak = float(w @ (pos[:, :band].sum(axis=1) + pos[:, -band:].sum(axis=1)))
    p = np.abs(state.grid.momenta(state.hbar))
    edge = p > (1.0 - EDGE_FRACTION) * state.grid.max_momentum(state.hbar)
    p_leak = float(w @ _momentum_probabilities(state, workers)[:, edge].sum(axis=1))
    return q_leak, p_leak


# =========================================================================
# Propagation
# =========================================================================

class SplitOperatorPropagator:
    """Strang split steps for a fixed grid and potential.

    Phase factors are cached per step length.
    """

    def __init__(self, grid: GridSpec, potential: PolynomialPotential, hbar: float,
                 workers: int = 1):
        self.grid = grid
        self.potential = potential
        self.hbar = hbar
        self.workers = max(1, int(workers))
        self._v = np.asarray(potential.value(grid.points), dtype=float)
        self._kinetic = grid.momenta(hbar) ** 2 / (2.0 * potential.mass)
        self._cache: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def phases(self, h: float):
        if h not in self._cache:
            half = np.exp(-0.5j * h * self._v / self.hbar)
            self._cache[h] = (half, half * half, np.exp(-1j * h * self._kinetic / self.hbar))
        return self._cache[h]

    def advance(self, branches: np.ndarray, n_steps: int, h: float) -> None:
        """Apply ``n_steps`` steps of length ``h`` in place, block by block."""
        if n_steps <= 0:
            return
        half, full, drift = self.phases(h)
        for start in range(0, branches.shape[0], BRANCH_BLOCK):
            psi = branches[start:start + BRANCH_BLOCK]
            psi *= half
            for step in range(n_steps):
                psi[...] = scipy.fft.ifft(scipy.fft.fft(psi, axis=1, workers=self.workers) * drift,
                                          axis=1, workers=self.workers)
                psi *= full if step < n_steps - 1 else half


def default_time_step(params: PacketParams, potential: PolynomialPotential) -> float:
    return characteristic_time(params, potential) / STEPS_PER_CHARACTERISTIC_TIME


def evolve_quantum(state: MixedStateGrid, potential: PolynomialPotential, times,
                   dt: float | None = None, *, threads: int = 1,
                   leakage_tolerance: float = LEAKAGE_TOLERANCE,
                   return_state: bool = False):
    """Propagate a copy of ``state`` and record (Q, P, dQ, dP) at ``times``.

    Probability reaching the edge bands of the grid, in position or in
    momentum, above ``leakage_tolerance`` raises GridLeakageError.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if dt is None:
        if state.params is None:
            raise InvalidParameterError("dt required for a state without packet parameters")
        dt = default_time_step(state.params, potential)
    schedule = step_schedule(times, float(dt))
    work = state.copy()
    propagator = SplitOperatorPropagator(work.grid, potential, work.hbar, threads)
    logger.info("quantum run: %d branches, %d points, %d times, dt=%.6g",
                work.n_branches, work.grid.n_points, times.size, dt)

    rows = []
    worst_leak = 0.0
    for t, (n_steps, h) in zip(times, schedule):
        logger.debug("interval to t=%.6g: %d steps of %.6g", t, n_steps, h)
        propagator.advance(work.branches, n_steps, h)
        q_leak, p_leak = edge_leakage(work, threads)
        worst_leak = max(worst_leak, q_leak, p_leak)
        if max(q_leak, p_leak) > leakage_tolerance:
            raise GridLeakageError(
                "probability reached the grid edges",
                {"t": float(t), "position_leak": q_leak, "momentum_leak": p_leak,
                 "tolerance": leakage_tolerance})
        rows.append(observables(work, threads))

    norms = branch_norms(work)
    columns = np.array(rows).T
    meta = {
        "engine": "quantum",
        "dt": float(dt),
        "grid_points": work.grid.n_points,
        "q_min": work.grid.q_min,
        "q_max": work.grid.q_max,
        "branches": work.n_branches,
        "max_leakage": worst_leak,
        "max_norm_error": float(np.max(np.abs(norms - 1.0))),
    }
    trajectory = Trajectory(times=times, Q=columns[0], P=columns[1], dQ=columns[2],
                            dP=columns[3], kind="quantum", meta=meta)
    return (trajectory, work) if return_state else trajectory


def run_quantum(params: PacketParams, potential: PolynomialPotential, times,
                dt: float | None = None, tol: float = DEFAULT_SPECTRUM_TOL,
                grid_points: int | None = None, threads: int = 1, return_state: bool = False):
    """Build a grid covering the run, the state on it, and evolve it."""
    dt = default_time_step(params, potential) if dt is None else float(dt)
    spectrum = quantum_spectrum(params, tol)
    q_lo, q_hi, p_bound = packet_envelope(spectrum, potential, times, dt)
    grid = GridSpec.for_packet(q_lo, q_hi, p_bound, params.hbar)
    if grid_points is not None and grid_points > grid.n_points:
        grid = GridSpec(grid.q_min, grid.q_max, grid_points)
    state = build_state(params, grid, tol)
    return evolve_quantum(state, potential, times, dt, threads=threads, return_state=return_state)


# =========================================================================
# Density dump
# =========================================================================

DUMP_HEADER = struct.Struct("<qddq")


def encode_density_dump(state: MixedStateGrid) -> bytes:
    """Header (n_points, q_min, dq, n_branches) then |psi_n|^2 rows as float64."""
    grid = state.grid
    header = DUMP_HEADER.pack(grid.n_points, grid.q_min, grid.dq, state.n_branches)
    body = np.ascontiguousarray(np.abs(state.branches) ** 2, dtype="<f8").tobytes()
    return header + body


def decode_density_dump(data: bytes) -> tuple[GridSpec, np.ndarray]:
    n_points, q_min, dq, n_branches = DUMP_HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f8", offset=DUMP_HEADER.size)
    grid = GridSpec(q_min, q_min + dq * n_points, n_points)
    return grid, body.reshape(n_branches, n_points)


def write_density_dump(path, state: MixedStateGrid) -> None:
    atomic_write_bytes(path, encode_density_dump(state))
