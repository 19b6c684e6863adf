"""
Numerical maximum-entropy solver for the classical packet.

The constrained problem (prescribed <q>, <q^2>, <p>, <p^2>) is solved through
its dual: minimize the convex function

    g(lam) = log Z(lam) + lam . b,    Z(lam) = sum exp(-lam . f(q, p)) dq dp / v

over the four multipliers of f = (q, q^2, p, p^2) on a midpoint grid. The
gradient of g is the moment residual and its Hessian the feature covariance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import ConvergenceError, InfeasibleConstraintsError, InvalidParameterError
from .packets import PacketParams, classical_density

logger = logging.getLogger(__name__)

COVERAGE_SIGMAS = 8.0
DEFAULT_NODES = 512
# Analytic standardized multipliers (0, 1/2, 0, 1/2) perturbed by 50%.
INITIAL_MULTIPLIERS = (0.5, 0.75, -0.5, 0.25)


@dataclass(frozen=True)
class MomentConstraints:
    """Moment targets and the rectangular phase-space grid they live on."""

    mean_q: float
    second_q: float
    mean_p: float
    second_p: float
    q_bounds: tuple[float, float]
    p_bounds: tuple[float, float]
    n_q: int = DEFAULT_NODES
    n_p: int = DEFAULT_NODES
    v: float = 2.0 * math.pi

    def __post_init__(self):
        if self.var_q <= 0 or self.var_p <= 0:
            raise InfeasibleConstraintsError(
                "moment targets need positive variances",
                {"var_q": self.var_q, "var_p": self.var_p})
        if self.n_q < 2 or self.n_p < 2 or self.v <= 0:
            raise InvalidParameterError("grid needs >= 2 nodes per axis and v > 0",
                                        {"n_q": self.n_q, "n_p": self.n_p, "v": self.v})
        for axis, (lo, hi), mean, var in (("q", self.q_bounds, self.mean_q, self.var_q),
                                          ("p", self.p_bounds, self.mean_p, self.var_p)):
            reach = COVERAGE_SIGMAS * math.sqrt(var) * (1.0 - 1e-12)
            if lo > mean - reach or hi < mean + reach:
                raise InvalidParameterError(
                    f"{axis} grid must cover {COVERAGE_SIGMAS:g} standard deviations",
                    {"axis": axis, "bounds": (lo, hi), "mean": mean, "std": math.sqrt(var)})

    @property
    def var_q(self) -> float:
        return self.second_q - self.mean_q ** 2

    @property
    def var_p(self) -> float:
        return self.second_p - self.mean_p ** 2

    @property
    def targets(self) -> np.ndarray:
        return np.array([self.mean_q, self.second_q, self.mean_p, self.second_p])

    @classmethod
    def from_params(cls, params: PacketParams, n_q: int = DEFAULT_NODES,
                    n_p: int | None = None, sigmas: float = COVERAGE_SIGMAS) -> "MomentConstraints":
        """Targets Q, dQ^2 + Q^2, P, dP^2 + P^2 on a grid spanning +-sigmas."""
        return cls(
            mean_q=params.Q, second_q=params.dQ ** 2 + params.Q ** 2,
            mean_p=params.P, second_p=params.dP ** 2 + params.P ** 2,
            q_bounds=(params.Q - sigmas * params.dQ, params.Q + sigmas * params.dQ),
            p_bounds=(params.P - sigmas * params.dP, params.P + sigmas * params.dP),
            n_q=n_q, n_p=n_q if n_p is None else n_p, v=params.v,
        )

    def nodes(self) -> tuple[np.ndarray, np.ndarray, float, float]:
        """Midpoint nodes along q and p and the cell sizes."""
        (q_lo, q_hi), (p_lo, p_hi) = self.q_bounds, self.p_bounds
        dq = (q_hi - q_lo) / self.n_q
        dp = (p_hi - p_lo) / self.n_p
        return (q_lo + dq * (np.arange(self.n_q) + 0.5),
                p_lo + dp * (np.arange(self.n_p) + 0.5), dq, dp)


@dataclass
class DualSolution:
    multipliers: np.ndarray
    standardized: np.ndarray
    density: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    cell: float
    residuals: np.ndarray
    iterations: int
    decrements: list[float]
    entropy: float
    converged: bool

    def summary(self) -> dict:
        return {
            "multipliers": self.multipliers.tolist(),
            "residuals": self.residuals.tolist(),
            "iterations": self.iterations,
            "newton_decrements": list(self.decrements),
            "entropy": self.entropy,
            "converged": self.converged,
        }


def _log_partition(features: np.ndarray, lam: np.ndarray, log_cell: float):
    """log Z, the log-density on the grid, and the normalized probabilities."""
    log_weights = -(lam @ features)
    log_z = logsumexp(log_weights)
    log_prob = log_weights - log_z
    return log_z + log_cell, log_prob


def discrete_entropy(density, cell: float | None = None) -> float:
    """-sum rho ln rho dq dp / v for a density normalized against ``cell``."""
    if isinstance(density, DualSolution):
        density, cell = density.density, density.cell
    if cell is None:
        raise InvalidParameterError("cell size required for a bare density")
    return float(-np.sum(xlogy(density, density)) * cell)


def check_decrements(decrements: Sequence[float], slack: float = 0.0) -> None:
    """Raise ConvergenceError if the Newton decrement grows after the first step.

    Increases within ``slack`` are rounding noise near convergence and pass.
    """
    for k in range(2, len(decrements)):
        if decrements[k] > decrements[k - 1] + slack:
            raise ConvergenceError(
                "Newton decrement increased after the first step",
                {"iteration": k + 1, "previous": decrements[k - 1],
                 "decrement": decrements[k], "slack": slack})


def solve_dual(constraints: MomentConstraints, tol: float = 1e-10, max_iter: int = 100,
               initial=INITIAL_MULTIPLIERS) -> DualSolution:
    """Damped Newton on the dual in standardized coordinates.

    Returns multipliers (lam1, lam2, lam3, lam4) of
    exp(-lam1 q - lam2 q^2 - lam3 p - lam4 p^2). Hitting ``max_iter`` raises
    ConvergenceError with the last residuals attached. So does a Newton
    decrement that grows after the first step.
    """
    q, p, dq, dp = constraints.nodes()
    mq, sq = constraints.mean_q, math.sqrt(constraints.var_q)
    mp, sp = constraints.mean_p, math.sqrt(constraints.var_p)
    x, y = np.meshgrid((q - mq) / sq, (p - mp) / sp, indexing="ij")
    features = np.stack([x.ravel(), x.ravel() ** 2, y.ravel(), y.ravel() ** 2])
    targets = np.array([0.0, 1.0, 0.0, 1.0])
    cell = dq * dp / constraints.v
    log_cell = math.log(cell)

    lam = np.asarray(initial, dtype=float)
    log_z, log_prob = _log_partition(features, lam, log_cell)
    objective = log_z + lam @ targets
    decrements: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        prob = np.exp(log_prob)
        expected = features @ prob
        gradient = targets - expected
        if np.max(np.abs(gradient)) < tol:
            converged = True
            iteration -= 1
            break
        centred = features - expected[:, None]
        hessian = (centred * prob) @ centred.T
        step = np.linalg.solve(hessian, -gradient)
        decrement = float(math.sqrt(max(-gradient @ step, 0.0)))
        decrements.append(decrement)
        logger.debug("dual iteration %d: decrement=%.3e max residual=%.3e",
                     iteration, decrement, np.max(np.abs(gradient)))
        t = 1.0
        while True:
            candidate = lam + t * step
            cand_log_z, cand_log_prob = _log_partition(features, candidate, log_cell)
            cand_objective = cand_log_z + candidate @ targets
            if cand_objective <= objective + 0.25 * t * (gradient @ step) or t < 1e-12:
                break
            t *= 0.5
        lam, log_prob, objective = candidate, cand_log_prob, cand_objective

    prob = np.exp(log_prob)
    residual_std = targets - features @ prob
    converged = converged or bool(np.max(np.abs(residual_std)) < tol)
    if not converged:
        raise ConvergenceError(
            "dual Newton iteration did not converge",
            {"iterations": max_iter, "max_residual": float(np.max(np.abs(residual_std))),
             "tol": tol})
    check_decrements(decrements, slack=tol)

    a1, a2, a3, a4 = lam
    multipliers = np.array([
        a1 / sq - 2.0 * a2 * mq / sq ** 2, a2 / sq ** 2,
        a3 / sp - 2.0 * a4 * mp / sp ** 2, a4 / sp ** 2,
    ])
    density = (prob / cell).reshape(q.size, p.size)
    qq, pp = np.meshgrid(q, p, indexing="ij")
    raw = np.array([np.sum(prob * qq.ravel()), np.sum(prob * qq.ravel() ** 2),
                    np.sum(prob * pp.ravel()), np.sum(prob * pp.ravel() ** 2)])
    solution = DualSolution(
        multipliers=multipliers, standardized=lam, density=density, q=q, p=p, cell=cell,
        residuals=raw - constraints.targets, iterations=iteration, decrements=decrements,
        entropy=0.0, converged=converged,
    )
    solution.entropy = discrete_entropy(solution)
    logger.info("dual solved in %d iterations, multipliers=%s", iteration, multipliers)
    return solution


def l1_distance_to_analytic(solution: DualSolution, params: PacketParams) -> float:
    """sum |rho_numeric - rho_analytic| dq dp / v over the solution grid."""
    qq, pp = np.meshgrid(solution.q, solution.p, indexing="ij")
    analytic = classical_density(params, qq, pp)
    return float(np.sum(np.abs(solution.density - analytic)) * solution.cell)


@dataclass(frozen=True)
class WitnessResult:
    trials: int
    max_entropy_gain: float
    max_constraint_error: float
    passed: bool


def entropy_maximality_witness(solution: DualSolution, n_trials: int = 100, seed: int = 0,
                               amplitude: float = 0.5) -> WitnessResult:
    """Check that feasible multiplicative perturbations never raise the entropy.

    Each trial draws u, removes its weighted projection on (1, q, q^2, p, p^2)
    so rho (1 + t u) keeps every constraint, and compares entropies.
    """
    rho = solution.density.ravel()
    prob = rho * solution.cell
    qq, pp = np.meshgrid(solution.q, solution.p, indexing="ij")
    mq, mp = float(prob @ qq.ravel()), float(prob @ pp.ravel())
    sq = math.sqrt(float(prob @ (qq.ravel() - mq) ** 2))
    sp = math.sqrt(float(prob @ (pp.ravel() - mp) ** 2))
    x, y = (qq.ravel() - mq) / sq, (pp.ravel() - mp) / sp
    basis = np.stack([np.ones_like(x), x, x ** 2, y, y ** 2], axis=1)
    gram = (basis * prob[:, None]).T @ basis

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))
    base = solution.entropy
    max_gain = -math.inf
    max_error = 0.0
    for _ in range(n_trials):
        u = rng.standard_normal(rho.size)
        u -= basis @ np.linalg.solve(gram, basis.T @ (prob * u))
        t = amplitude / np.max(np.abs(u))
        perturbed = rho * (1.0 + t * u)
        max_error = max(max_error, float(np.max(np.abs(basis.T @ (perturbed * solution.cell)
                                                         - basis.T @ prob))))
        max_gain = max(max_gain, discrete_entropy(perturbed, solution.cell) - base)
    passed = max_gain <= 1e-12 * max(1.0, abs(base))
    logger.info("maximality witness: %d trials, max entropy gain %.3e", n_trials, max_gain)
    return WitnessResult(n_trials, max_gain, max_error, passed)
