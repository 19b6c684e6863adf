"""
Classical ME packet dynamics.

An ensemble drawn from the classical packet (Monte Carlo samples or tensor
Gauss-Hermite nodes) is pushed through Hamilton's equations

    dq/dt = p / mu,    dp/dt = -V'(q)

with a fixed-step leapfrog integrator, and the weighted ensemble moments are
recorded at the requested times.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import EnsembleEscapeError, IntegratorInstabilityError, InvalidParameterError
from .packets import SAMPLE_BLOCK, PacketParams, classical_quadrature, sample_classical
from .potentials import PolynomialPotential, characteristic_time, force
from .trajectory import Trajectory, step_schedule

__all__ = [
    "Trajectory",
    "SCHEMES",
    "METHODS",
    "default_time_step",
    "ensemble_energy",
    "ensemble_energy_drift",
    "integrate_ensemble",
    "moment_match",
    "evolve_classical",
    "estimate_escape_time",
]

logger = logging.getLogger(__name__)

SCHEMES = ("position", "velocity")
METHODS = ("monte_carlo", "quadrature")
MIN_SAMPLES = 1000
DEFAULT_DRIFT_TOLERANCE = 1e-3
STEPS_PER_CHARACTERISTIC_TIME = 1000


def default_time_step(params: PacketParams, potential: PolynomialPotential) -> float:
    return characteristic_time(params, potential) / STEPS_PER_CHARACTERISTIC_TIME


def ensemble_energy(potential: PolynomialPotential, q, p) -> np.ndarray:
    """Per-sample energy p^2 / 2 mu + V(q)."""
    return np.asarray(p) ** 2 / (2.0 * potential.mass) + potential.value(q)


def ensemble_energy_drift(before, after) -> float:
    """Largest relative per-sample energy change between two snapshots.

    Each change is divided by max(|E_before|, mean |E_before|) so samples
    sitting near zero energy do not dominate.
    """
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    if before.shape != after.shape:
        raise InvalidParameterError("energy snapshots differ in size",
                                    {"before": before.size, "after": after.size})
    if not np.all(np.isfinite(after)):
        return math.inf
    scale = float(np.mean(np.abs(before))) or 1.0
    denom = np.maximum(np.abs(before), scale)
    return float(np.max(np.abs(after - before) / denom))


def integrate_ensemble(q: np.ndarray, p: np.ndarray, potential: PolynomialPotential,
                       n_steps: int, h: float, scheme: str = "position") -> None:
    """Advance (q, p) in place by ``n_steps`` leapfrog steps of length ``h``.

    ``position`` is drift-kick-drift, ``velocity`` is kick-drift-kick.
    """
    if n_steps <= 0:
        return
    inv_mass = 1.0 / potential.mass
    if scheme == "position":
        q += 0.5 * h * inv_mass * p
        for step in range(n_steps):
            p += h * force(potential, q)
            q += (h if step < n_steps - 1 else 0.5 * h) * inv_mass * p
    elif scheme == "velocity":
        p += 0.5 * h * force(potential, q)
        for step in range(n_steps):
            q += h * inv_mass * p
            p += (h if step < n_steps - 1 else 0.5 * h) * force(potential, q)
    else:
        raise InvalidParameterError(f"unknown integration scheme {scheme!r}", {"scheme": scheme})


def moment_match(params: PacketParams, q: np.ndarray, p: np.ndarray,
                 weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recentre and whiten the ensemble so its weighted mean is (Q, P) and its
    covariance is diag(dQ^2, dP^2)."""
    x = np.vstack([q, p])
    centred = x - (x @ weights)[:, None]
    cov = (centred * weights) @ centred.T
    white = np.linalg.solve(np.linalg.cholesky(cov), centred)
    return params.Q + params.dQ * white[0], params.P + params.dP * white[1]


def _moments(q: np.ndarray, p: np.ndarray, weights: np.ndarray, monte_carlo: bool):
    mean_q = float(np.sum(weights * q))
    mean_p = float(np.sum(weights * p))
    dq = q - mean_q
    dp = p - mean_p
    var_q = float(np.sum(weights * dq ** 2))
    var_p = float(np.sum(weights * dp ** 2))
    stderr = None
    if monte_carlo:
        n = q.size
        fourth_q = float(np.sum(weights * dq ** 4))
        fourth_p = float(np.sum(weights * dp ** 4))
        stderr = (
            math.sqrt(var_q / n),
            math.sqrt(var_p / n),
            math.sqrt(max(fourth_q - var_q ** 2, 0.0) / n) / (2.0 * math.sqrt(var_q)),
            math.sqrt(max(fourth_p - var_p ** 2, 0.0) / n) / (2.0 * math.sqrt(var_p)),
        )
    return (mean_q, mean_p, math.sqrt(var_q), math.sqrt(var_p)), stderr


def _check_escape(q: np.ndarray, p: np.ndarray, escape_bound: float | None, t: float) -> None:
    finite = np.isfinite(q) & np.isfinite(p)
    escaped = ~finite
    if escape_bound is not None:
        escaped |= np.abs(np.where(finite, q, 0.0)) > escape_bound
    count = int(np.count_nonzero(escaped))
    if count:
        raise EnsembleEscapeError(
            "ensemble samples escaped the integration region",
            {"t": t, "escaped": count, "bound": escape_bound})


def _initial_ensemble(params, n, seed, method, quadrature_order, moment_matching):
    if method == "monte_carlo":
        if n < MIN_SAMPLES:
            raise InvalidParameterError(f"Monte Carlo ensembles need at least {MIN_SAMPLES} samples",
                                        {"n": n})
        q, p = sample_classical(params, n, seed)
        weights = np.full(n, 1.0 / n)
        if moment_matching:
            q, p = moment_match(params, q, p, weights)
        return q, p, weights
    if method == "quadrature":
        return classical_quadrature(params, quadrature_order)
    raise InvalidParameterError(f"unknown ensemble method {method!r}", {"method": method})


def evolve_classical(params: PacketParams, potential: PolynomialPotential, times,
                     dt: float | None = None, n: int = 100_000, seed: int = 0, *,
                     scheme: str = "position", method: str = "monte_carlo",
                     quadrature_order: int = 48, moment_matching: bool = False,
                     escape_bound: float | None = None,
                     drift_tolerance: float | None = DEFAULT_DRIFT_TOLERANCE,
                     threads: int = 1) -> Trajectory:
    """Evolve the classical packet and record (Q, P, dQ, dP) at ``times``.

    The ensemble is integrated in fixed blocks of samples, one block per task,
    so the result does not depend on ``threads``. Energy drift above
    ``drift_tolerance`` and samples leaving ``|q| <= escape_bound`` raise
    diagnostics instead of contaminating the moments.

    ``moment_matching`` pins the sample mean and covariance to the packet
    values. The samples are then no longer independent, so no standard
    errors are reported for such a run.
    """
    if scheme not in SCHEMES:
        raise InvalidParameterError(f"unknown integration scheme {scheme!r}", {"scheme": scheme})
    times = np.atleast_1d(np.asarray(times, dtype=float))
    dt = default_time_step(params, potential) if dt is None else float(dt)
    schedule = step_schedule(times, dt)
    monte_carlo = method == "monte_carlo"

    q, p, weights = _initial_ensemble(params, n, seed, method, quadrature_order, moment_matching)
    energy0 = ensemble_energy(potential, q, p)
    blocks = [slice(start, min(start + SAMPLE_BLOCK, q.size))
              for start in range(0, q.size, SAMPLE_BLOCK)]
    logger.info("classical run: %d %s samples, %d times, dt=%.6g, scheme=%s",
                q.size, method, times.size, dt, scheme)

    rows = []
    errors = []
    max_drift = 0.0
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        for t, (n_steps, h) in zip(times, schedule):
            logger.debug("interval to t=%.6g: %d steps of %.6g", t, n_steps, h)
            list(pool.map(
                lambda block: integrate_ensemble(q[block], p[block], potential, n_steps, h, scheme),
                blocks))
            _check_escape(q, p, escape_bound, float(t))
            drift = ensemble_energy_drift(energy0, ensemble_energy(potential, q, p))
            max_drift = max(max_drift, drift)
            if drift_tolerance is not None and drift > drift_tolerance:
                raise IntegratorInstabilityError(
                    "ensemble energy drift above bound; reduce dt",
                    {"t": float(t), "drift": drift, "tolerance": drift_tolerance, "dt": dt})
            state, stderr = _moments(q, p, weights, monte_carlo and not moment_matching)
            rows.append(state)
            if stderr is not None:
                errors.append(stderr)

    columns = np.array(rows).T
    meta = {
        "engine": "classical",
        "method": method,
        "scheme": scheme,
        "dt": dt,
        "samples": int(q.size),
        "seed": seed if monte_carlo else None,
        "moment_matching": bool(moment_matching and monte_carlo),
        "max_energy_drift": max_drift,
    }
    if not monte_carlo:
        meta["quadrature_order"] = quadrature_order
    return Trajectory(times=times, Q=columns[0], P=columns[1], dQ=columns[2], dP=columns[3],
                      kind="classical", meta=meta,
                      stderr=np.array(errors).T if errors else None)


def estimate_escape_time(params: PacketParams, potential: PolynomialPotential, bound: float,
                         t_max: float, dt: float | None = None,
                         quadrature_order: int = 32) -> float:
    """Earliest time a quadrature node of the packet leaves |q| <= bound.

    Returns inf when no node escapes before ``t_max``.
    """
    if bound <= 0 or t_max <= 0:
        raise InvalidParameterError("escape pilot needs bound > 0 and t_max > 0",
                                    {"bound": bound, "t_max": t_max})
    dt = default_time_step(params, potential) if dt is None else float(dt)
    q, p, _ = classical_quadrature(params, quadrature_order)
    n_steps = max(1, math.ceil(t_max / dt))
    h = t_max / n_steps
    for step in range(1, n_steps + 1):
        integrate_ensemble(q, p, potential, 1, h, "velocity")
        if not (np.all(np.isfinite(q)) and np.max(np.abs(q)) <= bound):
            t_escape = step * h
            logger.info("pilot run: first escape at t=%.6g (bound %.6g)", t_escape, bound)
            return t_escape
    return math.inf
