"""
Classical and quantum maximum-entropy (ME) packets.

A packet is fixed by the four state coordinates (Q, P, dQ, dP). The
classical packet is the Gaussian phase-space density with those first and
second moments; the quantum packet is the thermal state of the displaced
oscillator

    K = (q - Q)^2 / 2dQ^2 + (p - P)^2 / 2dP^2,

whose eigenfunctions are Hermite functions of width l = sqrt(hbar dQ / dP)
and whose weights form a geometric series with ratio (nu - 1)/(nu + 1).

Units are the caller's; hbar is explicit and defaults to 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import InvalidParameterError, SpectrumTruncationError

logger = logging.getLogger(__name__)

DEFAULT_SPECTRUM_TOL = 1e-10
MAX_SPECTRUM_TERMS = 100_000

# Philox block size for counter-keyed sampling; a block is the unit of
# reproducibility, so results do not depend on how blocks are scheduled.
SAMPLE_BLOCK = 65_536


# =========================================================================
# Parameters
# =========================================================================

@dataclass(frozen=True)
class PacketParams:
    """State coordinates of an ME packet plus physical constants.

    ``v`` is the auxiliary phase-space volume making the classical density
    dimensionless. It defaults to 2*pi*hbar.
    """

    Q: float = 0.0
    P: float = 0.0
    dQ: float = 1.0
    dP: float = 1.0
    hbar: float = 1.0
    v: float | None = None

    def __post_init__(self):
        for name in ("Q", "P", "dQ", "dP", "hbar"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite", {name: value})
            object.__setattr__(self, name, value)
        for name in ("dQ", "dP", "hbar"):
            if getattr(self, name) <= 0:
                raise InvalidParameterError(f"{name} must be positive", {name: getattr(self, name)})
        v = 2.0 * math.pi * self.hbar if self.v is None else float(self.v)
        if not (math.isfinite(v) and v > 0):
            raise InvalidParameterError("v must be positive", {"v": v})
        object.__setattr__(self, "v", v)

    @property
    def nu(self) -> float:
        return nu(self)

    @property
    def length_scale(self) -> float:
        """Width of the displaced-oscillator eigenfunctions."""
        return math.sqrt(self.hbar * self.dQ / self.dP)

    def scaled(self, s: float) -> "PacketParams":
        """Multiply both spreads by ``s``; nu grows as s^2."""
        return replace(self, dQ=self.dQ * s, dP=self.dP * s)

    def boosted(self, dp: float) -> "PacketParams":
        return replace(self, P=self.P + dp)

    def as_dict(self) -> dict:
        return {"Q": self.Q, "P": self.P, "dQ": self.dQ, "dP": self.dP,
                "hbar": self.hbar, "v": self.v}


def nu(params: PacketParams) -> float:
    """Dimensionless fuzziness 2 dP dQ / hbar."""
    return 2.0 * params.dP * params.dQ / params.hbar


def exponent_coefficient(nu_value: float) -> float:
    """(nu/2) ln((nu+1)/(nu-1)); tends to 1 as nu grows, infinite at nu = 1."""
    if nu_value < 1.0:
        raise InvalidParameterError("exponent coefficient needs nu >= 1", {"nu": nu_value})
    if nu_value == 1.0:
        return math.inf
    return 0.5 * nu_value * math.log1p(2.0 / (nu_value - 1.0))


# =========================================================================
# Classical packet
# =========================================================================

def classical_density(params: PacketParams, q, p):
    """Dimensionless Gaussian density; integrates to 1 against dq dp / v."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    prefactor = params.v / (2.0 * math.pi * params.dQ * params.dP)
    exponent = -0.5 * ((q - params.Q) / params.dQ) ** 2 - 0.5 * ((p - params.P) / params.dP) ** 2
    return prefactor * np.exp(exponent)


def classical_entropy(params: PacketParams) -> float:
    """Closed form 1 + ln(2 pi dQ dP / v)."""
    return 1.0 + math.log(2.0 * math.pi * params.dQ * params.dP / params.v)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def gaussian_central_moment(sigma: float, order: int) -> float:
    """E[(x - mean)^order] of a normal variable with std ``sigma``."""
    if order < 0:
        raise InvalidParameterError("moment order must be non-negative", {"order": order})
    if order % 2:
        return 0.0
    return float(_double_factorial(order - 1)) * sigma ** order


def classical_central_moment(params: PacketParams, i: int, j: int) -> float:
    """<(q - Q)^i (p - P)^j> of the classical packet."""
    return gaussian_central_moment(params.dQ, i) * gaussian_central_moment(params.dP, j)


def _raw_moment(mean: float, sigma: float, order: int) -> float:
    return sum(
        math.comb(order, k) * mean ** (order - k) * gaussian_central_moment(sigma, k)
        for k in range(order + 1)
    )


def classical_raw_moment(params: PacketParams, i: int, j: int = 0) -> float:
    """<q^i p^j> by binomial expansion of the central moments."""
    return _raw_moment(params.Q, params.dQ, i) * _raw_moment(params.P, params.dP, j)


def sample_classical(params: PacketParams, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` i.i.d. phase-space points from the classical packet.

    Normals come from a Philox stream keyed by (seed, block index), so any
    prefix of the ensemble is the same whatever ``n`` is requested.
    """
    if n < 1:
        raise InvalidParameterError("sample count must be >= 1", {"n": n})
    q = np.empty(n)
    p = np.empty(n)
    for block, start in enumerate(range(0, n, SAMPLE_BLOCK)):
        stop = min(start + SAMPLE_BLOCK, n)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
        z = rng.standard_normal((2, SAMPLE_BLOCK))
        q[start:stop] = params.Q + params.dQ * z[0, : stop - start]
        p[start:stop] = params.P + params.dP * z[1, : stop - start]
    return q, p


def classical_quadrature(params: PacketParams, order: int = 48,
                         prune: float = 1e-18) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite nodes (q, p) and weights for the classical packet.

    Nodes whose weight is below ``prune`` times the largest weight are
    dropped and the rest renormalized; far nodes otherwise dominate any
    escape check while carrying no probability.
    """
    x, w = hermgauss(order)
    xq, xp = np.meshgrid(x, x, indexing="ij")
    weights = np.outer(w, w).ravel() / math.pi
    keep = weights >= prune * weights.max()
    weights = weights[keep]
    q = params.Q + math.sqrt(2.0) * params.dQ * xq.ravel()[keep]
    p = params.P + math.sqrt(2.0) * params.dP * xp.ravel()[keep]
    return q, p, weights / weights.sum()


# =========================================================================
# Hermite functions
# =========================================================================

def iter_hermite_functions(x, n_max: int) -> Iterator[np.ndarray]:
    """Yield normalized Hermite functions h_0 .. h_{n_max} at ``x``.

    Uses h_{n+1} = sqrt(2/(n+1)) x h_n - sqrt(n/(n+1)) h_{n-1} on the
    polynomial part, rescaling in log space whenever it grows large, so
    neither factorials nor the Gaussian envelope over/underflow.
    """
    x = np.asarray(x, dtype=float)
    log_envelope = -0.5 * x ** 2
    log_scale = np.zeros_like(x)
    prev = np.zeros_like(x)
    curr = np.full_like(x, math.pi ** -0.25)
    yield curr * np.exp(log_envelope)
    for n in range(n_max):
        nxt = math.sqrt(2.0 / (n + 1)) * x * curr - math.sqrt(n / (n + 1)) * prev
        prev, curr = curr, nxt
        magnitude = np.abs(curr)
        big = magnitude > 1e150
        if big.any():
            factor = np.where(big, magnitude, 1.0)
            prev = prev / factor
            curr = curr / factor
            log_scale = log_scale + np.log(factor)
        yield curr * np.exp(log_scale + log_envelope)


def hermite_functions(x, n_max: int) -> np.ndarray:
    """Array of shape (n_max + 1, *x.shape) of normalized Hermite functions."""
    return np.stack(list(iter_hermite_functions(x, n_max)))


# =========================================================================
# Quantum packet
# =========================================================================

@dataclass(frozen=True)
class QuantumSpectral:
    """Spectral form of the quantum ME packet.

    Eigenfunction n is the n-th Hermite function of width ``length_scale``,
    displaced by Q and multiplied by exp(iPq/hbar).
    """

    params: PacketParams
    ratio: float
    weights: np.ndarray = field(repr=False)
    n_max: int
    length_scale: float

    @property
    def purity(self) -> float:
        return float(np.sum(self.weights ** 2))

    @property
    def trace(self) -> float:
        return float(np.sum(self.weights))

    @property
    def k_eigenvalues(self) -> np.ndarray:
        """Eigenvalues (2/nu)(n + 1/2) of K for the retained levels."""
        return (2.0 / self.params.nu) * (np.arange(self.n_max + 1) + 0.5)

    def position_variance(self) -> float:
        n = np.arange(self.n_max + 1)
        return self.length_scale ** 2 * float(np.sum(self.weights * (n + 0.5)) / self.trace)

    def momentum_variance(self) -> float:
        n = np.arange(self.n_max + 1)
        hbar = self.params.hbar
        return (hbar / self.length_scale) ** 2 * float(np.sum(self.weights * (n + 0.5)) / self.trace)

    def eigenfunctions(self, q) -> np.ndarray:
        """Complex eigenfunctions sampled at ``q``, shape (n_max + 1, len(q))."""
        q = np.asarray(q, dtype=float)
        ell = self.length_scale
        h = hermite_functions((q - self.params.Q) / ell, self.n_max) / math.sqrt(ell)
        return h * np.exp(1j * self.params.P * q / self.params.hbar)


def quantum_spectrum(params: PacketParams, tol: float = DEFAULT_SPECTRUM_TOL,
                     max_terms: int = MAX_SPECTRUM_TERMS) -> QuantumSpectral:
    """Geometric spectrum of the quantum ME packet truncated at mass 1 - tol."""
    if not 0.0 < tol < 1.0:
        raise InvalidParameterError("spectrum tolerance must lie in (0, 1)", {"tol": tol})
    nu_value = params.nu
    if nu_value < 1.0 - 1e-12:
        raise InvalidParameterError(
            "no quantum ME packet below minimum uncertainty (nu < 1)", {"nu": nu_value})
    ratio = max(0.0, (nu_value - 1.0) / (nu_value + 1.0))
    if ratio == 0.0:
        weights = np.array([1.0])
    else:
        # smallest n_max with 1 - ratio^(n_max + 1) >= 1 - tol
        n_max = max(0, math.ceil(math.log(tol) / math.log(ratio)) - 1)
        while ratio ** (n_max + 1) > tol:
            n_max += 1
        if n_max + 1 > max_terms:
            raise SpectrumTruncationError(
                "spectrum needs more terms than the cap; nu too large for grid methods",
                {"nu": nu_value, "terms": n_max + 1, "cap": max_terms})
        weights = (1.0 - ratio) * ratio ** np.arange(n_max + 1)
    logger.debug("quantum spectrum nu=%.6g ratio=%.6g terms=%d", nu_value, ratio, weights.size)
    return QuantumSpectral(params=params, ratio=ratio, weights=weights,
                           n_max=weights.size - 1, length_scale=params.length_scale)


def quantum_entropy(params: PacketParams) -> float:
    """von Neumann entropy -ln(1-r) - r ln r / (1-r) of the geometric spectrum."""
    nu_value = params.nu
    if nu_value < 1.0 - 1e-12:
        raise InvalidParameterError("quantum entropy needs nu >= 1", {"nu": nu_value})
    ratio = max(0.0, (nu_value - 1.0) / (nu_value + 1.0))
    if ratio == 0.0:
        return 0.0
    return -math.log1p(-ratio) - ratio * math.log(ratio) / (1.0 - ratio)


def ground_wavefunction(params: PacketParams, q):
    """Gaussian wave packet with position spread dQ, centred at Q, boosted by P."""
    q = np.asarray(q, dtype=float)
    prefactor = (1.0 / (2.0 * math.pi * params.dQ ** 2)) ** 0.25
    return prefactor * np.exp(-((q - params.Q) ** 2) / (4.0 * params.dQ ** 2)
                              + 1j * params.P * q / params.hbar)


def spectral_position_density(spectrum: QuantumSpectral, q) -> np.ndarray:
    """sum_n w_n |phi_n(q)|^2, streamed level by level."""
    q = np.asarray(q, dtype=float)
    ell = spectrum.length_scale
    density = np.zeros_like(q)
    levels = iter_hermite_functions((q - spectrum.params.Q) / ell, spectrum.n_max)
    for weight, h in zip(spectrum.weights, levels):
        density += weight * h ** 2
    return density / (ell * spectrum.trace)
