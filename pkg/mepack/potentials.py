"""
Polynomial potentials and closed-form propagation for degree <= 2.

Coefficients are Taylor coefficients at the origin:

    V(q) = sum_k V_k q^k / k!

so ``(V0, V1, V2)`` reads V0 + V1 q + V2 q^2 / 2 and ``(0, 0, 0, V3)``
reads V3 q^3 / 6.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import InvalidParameterError, UnsupportedPotentialError
from .packets import PacketParams
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

MAX_DEGREE = 12


@dataclass(frozen=True)
class PolynomialPotential:
    """V(q) = sum_k coeffs[k] q^k / k! for a particle of mass ``mass``."""

    coeffs: tuple[float, ...] = (0.0,)
    mass: float = 1.0

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs) or (0.0,)
        if not all(math.isfinite(c) for c in coeffs):
            raise InvalidParameterError("potential coefficients must be finite", {"coeffs": coeffs})
        while len(coeffs) > 1 and coeffs[-1] == 0.0:
            coeffs = coeffs[:-1]
        if len(coeffs) - 1 > MAX_DEGREE:
            raise InvalidParameterError(
                f"potential degree capped at {MAX_DEGREE}", {"degree": len(coeffs) - 1})
        mass = float(self.mass)
        if not (math.isfinite(mass) and mass > 0):
            raise InvalidParameterError("mass must be positive", {"mass": mass})
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_string(cls, text: str, mass: float = 1.0) -> "PolynomialPotential":
        """Parse the CLI form ``"V0,V1,V2,..."``."""
        try:
            coeffs = tuple(float(tok) for tok in text.split(",") if tok.strip())
        except ValueError as exc:
            raise InvalidParameterError(f"cannot parse potential coefficients {text!r}") from exc
        return cls(coeffs, mass)

    def coefficient(self, k: int) -> float:
        return self.coeffs[k] if k < len(self.coeffs) else 0.0

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def kind(self) -> str:
        if self.degree >= 3:
            return "higher"
        if self.coefficient(2) != 0.0:
            return "quadratic"
        if self.coefficient(1) != 0.0:
            return "linear"
        return "free"

    @property
    def polynomial(self) -> Polynomial:
        return Polynomial([c / math.factorial(k) for k, c in enumerate(self.coeffs)])

    def value(self, q):
        return self.polynomial(np.asarray(q, dtype=float))

    def derivative(self, q, order: int = 1):
        return self.polynomial.deriv(order)(np.asarray(q, dtype=float))

    def force(self, q):
        return force(self, q)


def force(potential: PolynomialPotential, q):
    """-dV/dq evaluated at ``q``."""
    if potential.degree == 0:
        return np.zeros_like(np.asarray(q, dtype=float))
    return -potential.derivative(q, 1)


def characteristic_time(params: PacketParams, potential: PolynomialPotential) -> float:
    """sqrt(mu / |V''(Q)|), or the spreading time dQ mu / dP where V''(Q) = 0."""
    curvature = abs(float(potential.derivative(params.Q, 2))) if potential.degree >= 2 else 0.0
    if curvature > 0.0:
        return math.sqrt(potential.mass / curvature)
    return params.dQ * potential.mass / params.dP


# =========================================================================
# Closed forms
# =========================================================================

@dataclass(frozen=True)
class PropagatorCoefficients:
    """Affine maps Q(t) = f0 + Q f1 + P f2 and P(t) = g0 + Q g1 + P g2."""

    f0: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    g2: np.ndarray

    def symplectic_residual(self) -> np.ndarray:
        """f1 g2 - f2 g1 - 1, identically zero for a Hamiltonian flow."""
        return self.f1 * self.g2 - self.f2 * self.g1 - 1.0


def quadratic_propagator(potential: PolynomialPotential, t) -> PropagatorCoefficients:
    """Closed-form propagator coefficients for V0 + V1 q + V2 q^2 / 2."""
    if potential.degree >= 3:
        raise UnsupportedPotentialError(
            "closed forms exist only for potentials of degree <= 2", {"degree": potential.degree})
    t = np.asarray(t, dtype=float)
    mu = potential.mass
    v1 = potential.coefficient(1)
    v2 = potential.coefficient(2)
    zero = np.zeros_like(t)
    one = np.ones_like(t)

    if v2 == 0.0:
        return PropagatorCoefficients(
            f0=-v1 * t ** 2 / (2.0 * mu), f1=one, f2=t / mu,
            g0=-v1 * t, g1=zero, g2=one,
        )

    omega = math.sqrt(abs(v2) / mu)
    xi = math.sqrt(mu * abs(v2))
    logger.debug("closed-form propagator branch=%s omega=%.6g", "trig" if v2 > 0 else "hyperbolic", omega)
    half = 0.5 * omega * t
    if v2 > 0.0:
        c, s = np.cos(omega * t), np.sin(omega * t)
        one_minus_c = 2.0 * np.sin(half) ** 2
        return PropagatorCoefficients(
            f0=-(v1 / v2) * one_minus_c, f1=c, f2=s / xi,
            g0=-xi * (v1 / v2) * s, g1=-xi * s, g2=c,
        )
    # anti-harmonic: analytic continuation omega -> i omega
    c, s = np.cosh(omega * t), np.sinh(omega * t)
    one_minus_c = -2.0 * np.sinh(half) ** 2
    return PropagatorCoefficients(
        f0=-(v1 / v2) * one_minus_c, f1=c, f2=s / xi,
        g0=xi * (v1 / v2) * s, g1=xi * s, g2=c,
    )


def exact_trajectory(params: PacketParams, potential: PolynomialPotential, times) -> Trajectory:
    """Evaluate the four closed-form trajectory components on ``times``."""
    times = np.asarray(times, dtype=float)
    c = quadratic_propagator(potential, times)
    Q = c.f0 + params.Q * c.f1 + params.P * c.f2
    P = c.g0 + params.Q * c.g1 + params.P * c.g2
    dQ = np.sqrt((c.f1 * params.dQ) ** 2 + (c.f2 * params.dP) ** 2)
    dP = np.sqrt((c.g1 * params.dQ) ** 2 + (c.g2 * params.dP) ** 2)
    return Trajectory(times=times, Q=Q, P=P, dQ=dQ, dP=dP, kind="exact",
                      meta={"potential": list(potential.coeffs), "mass": potential.mass})
