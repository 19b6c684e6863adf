"""
Thermodynamics of a stiff rod modelled as an open harmonic chain.

N + 1 particles of mass mu are joined by springs of constant kappa^2 with
rest length xi:

    H = sum p_n^2 / 2 mu + (kappa^2 / 2) sum (x_n - x_{n-1} - xi)^2

After removing the equilibrium offsets the chain separates into the centre
of mass and N phonon modes, and the Gibbs state at inverse temperature lam
factorizes over modes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq

from .errors import ConvergenceError, InvalidParameterError, NoSolutionError

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class RodSpec:
    """Chain parameters; ``lam`` = 1/kT may be None before it is fixed."""

    N: int
    mu: float = 1.0
    kappa: float = 1.0
    xi: float = 1.0
    lam: float | None = 1.0
    hbar: float = 1.0
    k_B: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidParameterError("chain needs N >= 1 modes", {"N": self.N})
        object.__setattr__(self, "N", int(self.N))
        for name in ("mu", "kappa", "xi", "hbar", "k_B"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive", {name: value})
            object.__setattr__(self, name, value)
        if self.lam is not None:
            lam = float(self.lam)
            if not (math.isfinite(lam) and lam > 0):
                raise InvalidParameterError("lam must be positive", {"lam": lam})
            object.__setattr__(self, "lam", lam)

    @property
    def total_mass(self) -> float:
        return (self.N + 1) * self.mu

    def with_lambda(self, lam: float) -> "RodSpec":
        return replace(self, lam=lam)

    def with_n(self, n: int) -> "RodSpec":
        return replace(self, N=n)


def _require_lambda(spec: RodSpec) -> float:
    if spec.lam is None:
        raise InvalidParameterError("inverse temperature lam not set")
    return spec.lam


# =========================================================================
# Normal modes
# =========================================================================

def phonon_frequencies(spec: RodSpec) -> np.ndarray:
    """omega_m = (2 kappa / sqrt(mu)) sin(pi m / 2(N+1)), m = 1..N."""
    m = np.arange(1, spec.N + 1)
    return 2.0 * spec.kappa / math.sqrt(spec.mu) * np.sin(np.pi * m / (2.0 * (spec.N + 1)))


def coupling_matrix(spec: RodSpec) -> np.ndarray:
    """kappa^2 times the path-graph Laplacian of the N + 1 particles."""
    n = spec.N + 1
    k = np.zeros((n, n))
    idx = np.arange(n - 1)
    k[idx, idx] += 1.0
    k[idx + 1, idx + 1] += 1.0
    k[idx, idx + 1] = k[idx + 1, idx] = -1.0
    return spec.kappa ** 2 * k


def dense_mode_spectrum(spec: RodSpec) -> np.ndarray:
    """Squared frequencies from a dense eigensolve, zero mode included."""
    if spec.N + 1 > DENSE_LIMIT:
        raise InvalidParameterError(f"dense eigensolve limited to {DENSE_LIMIT} particles",
                                    {"N": spec.N})
    return eigh(coupling_matrix(spec) / spec.mu, eigvals_only=True)


@dataclass(frozen=True)
class ModeBasis:
    """Orthogonal map from particle displacements to (X, u_1 .. u_N).

    Row 0 of ``transform`` is the centre of mass, row m the m-th cosine mode.
    """

    frequencies: np.ndarray
    transform: np.ndarray
    coupling: np.ndarray

    def residuals(self) -> tuple[float, float]:
        """(orthogonality error, largest off-diagonal coupling)."""
        t = self.transform
        ortho = float(np.max(np.abs(t @ t.T - np.eye(t.shape[0]))))
        diag = t @ self.coupling @ t.T
        off = float(np.max(np.abs(diag - np.diag(np.diag(diag)))))
        return ortho, off

    def length_coefficients(self) -> np.ndarray:
        """Coefficients of x_{N+1} - x_1 on modes 1..N."""
        return (self.transform[:, -1] - self.transform[:, 0])[1:]


def mode_basis(spec: RodSpec) -> ModeBasis:
    if spec.N + 1 > DENSE_LIMIT:
        raise InvalidParameterError(f"explicit basis limited to {DENSE_LIMIT} particles",
                                    {"N": spec.N})
    size = spec.N + 1
    m = np.arange(size)[:, None]
    n = np.arange(1, size + 1)[None, :]
    transform = math.sqrt(2.0 / size) * np.cos(np.pi * m * (2 * n - 1) / (2.0 * size))
    transform[0, :] = 1.0 / math.sqrt(size)
    return ModeBasis(phonon_frequencies(spec), transform, coupling_matrix(spec))


def length_coefficients(spec: RodSpec) -> np.ndarray:
    """Closed form of ModeBasis.length_coefficients, usable for any N."""
    size = spec.N + 1
    m = np.arange(1, size)
    sign = np.where(m % 2 == 0, 1.0, -1.0)
    return (sign - 1.0) * math.sqrt(2.0 / size) * np.cos(np.pi * m / (2.0 * size))


# =========================================================================
# Gibbs state
# =========================================================================

def bose_occupation(x):
    """Mean phonon number 1 / (e^x - 1) at x = lam hbar omega."""
    return 1.0 / np.expm1(x)


def mode_occupation(spec: RodSpec, m: int, r: int) -> float:
    """Probability (1 - e^-x) e^-xr of r phonons in mode m."""
    if not 1 <= m <= spec.N or r < 0:
        raise InvalidParameterError("mode index must lie in [1, N] and r >= 0",
                                    {"m": m, "r": r, "N": spec.N})
    omega = 2.0 * spec.kappa / math.sqrt(spec.mu) * math.sin(math.pi * m / (2.0 * (spec.N + 1)))
    x = _require_lambda(spec) * spec.hbar * omega
    return -math.expm1(-x) * math.exp(-x * r)


def _scaled_frequencies(spec: RodSpec) -> tuple[np.ndarray, np.ndarray]:
    quanta = spec.hbar * phonon_frequencies(spec)
    return quanta, _require_lambda(spec) * quanta


def zero_point_energy(spec: RodSpec) -> float:
    return float(0.5 * spec.hbar * np.sum(phonon_frequencies(spec)))


def internal_energy(spec: RodSpec) -> float:
    """sum hbar omega (1/2 + 1/(e^x - 1))."""
    quanta, x = _scaled_frequencies(spec)
    return float(np.sum(quanta * (0.5 + bose_occupation(x))))


def energy_variance(spec: RodSpec) -> float:
    quanta, x = _scaled_frequencies(spec)
    return float(np.sum(quanta ** 2 / (4.0 * np.sinh(0.5 * x) ** 2)))


def energy_fluctuation(spec: RodSpec) -> float:
    """Var(E) / E^2 of the internal energy."""
    return energy_variance(spec) / internal_energy(spec) ** 2


def temperature(spec: RodSpec) -> float:
    return 1.0 / (spec.k_B * _require_lambda(spec))


def thermal_entropy(spec: RodSpec) -> float:
    """Gibbs entropy of the phonon gas in units of k_B."""
    _, x = _scaled_frequencies(spec)
    return float(np.sum(x * bose_occupation(x) - np.log(-np.expm1(-x))))


def heat_capacity(spec: RodSpec) -> float:
    return spec.k_B * _require_lambda(spec) ** 2 * energy_variance(spec)


def lambda_from_energy(spec: RodSpec, energy: float) -> float:
    """Inverse temperature at which the internal energy equals ``energy``."""
    e0 = zero_point_energy(spec)
    if not energy > e0:
        raise NoSolutionError("energy must exceed the zero-point energy",
                              {"energy": energy, "zero_point": e0})
    excess = energy - e0
    if spec.N == 1:
        quantum = spec.hbar * float(phonon_frequencies(spec)[0])
        return math.log1p(quantum / excess) / quantum

    # excess energy lies between N/lam - E0 and N/lam
    lo, hi = math.log(spec.N / energy), math.log(spec.N / excess)

    def residual(log_lam: float) -> float:
        return internal_energy(spec.with_lambda(math.exp(log_lam))) - energy

    log_lam, info = brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                           full_output=True)
    lam = math.exp(log_lam)
    miss = abs(internal_energy(spec.with_lambda(lam)) - energy)
    if not info.converged or miss > 1e-10 * energy:
        raise ConvergenceError("temperature inversion did not converge",
                               {"energy": energy, "residual": miss, "iterations": info.iterations})
    logger.debug("lambda_from_energy: E=%.6g -> lam=%.12g in %d iterations",
                 energy, lam, info.iterations)
    return lam


# =========================================================================
# Rod length
# =========================================================================

def rod_length_stats(spec: RodSpec) -> tuple[float, float]:
    """Mean N xi and variance sum c_m^2 (hbar / 2 mu omega_m) coth(x_m / 2)."""
    omega = phonon_frequencies(spec)
    x = _require_lambda(spec) * spec.hbar * omega
    c = length_coefficients(spec)
    variance = float(np.sum(c ** 2 * spec.hbar / (2.0 * spec.mu * omega) / np.tanh(0.5 * x)))
    return spec.N * spec.xi, variance


# =========================================================================
# Reports
# =========================================================================

@dataclass(frozen=True)
class RodReport:
    N: int
    mu: float
    kappa: float
    xi: float
    lam: float
    temperature: float
    total_mass: float
    omega_min: float
    omega_max: float
    zero_point_energy: float
    energy: float
    length: float
    length_variance: float
    relative_length_variance: float
    relative_energy_variance: float
    entropy: float
    heat_capacity: float

    COLUMNS = (
        ("N", ""), ("mu", "mass"), ("kappa", "sqrt(energy)/length"), ("xi", "length"),
        ("lam", "1/energy"), ("temperature", "energy/k_B"), ("total_mass", "mass"),
        ("omega_min", "1/time"), ("omega_max", "1/time"), ("zero_point_energy", "energy"),
        ("energy", "energy"), ("length", "length"), ("length_variance", "length^2"),
        ("relative_length_variance", ""), ("relative_energy_variance", ""),
        ("entropy", "k_B"), ("heat_capacity", "k_B"),
    )

    def row(self) -> list:
        return [getattr(self, name) for name, _ in self.COLUMNS]

    def as_dict(self) -> dict:
        return asdict(self)


def rod_report(spec: RodSpec) -> RodReport:
    omega = phonon_frequencies(spec)
    length, variance = rod_length_stats(spec)
    return RodReport(
        N=spec.N, mu=spec.mu, kappa=spec.kappa, xi=spec.xi, lam=_require_lambda(spec),
        temperature=temperature(spec), total_mass=spec.total_mass,
        omega_min=float(omega[0]), omega_max=float(omega[-1]),
        zero_point_energy=zero_point_energy(spec), energy=internal_energy(spec),
        length=length, length_variance=variance,
        relative_length_variance=variance / length ** 2,
        relative_energy_variance=energy_fluctuation(spec),
        entropy=thermal_entropy(spec), heat_capacity=heat_capacity(spec),
    )


def scan_n(spec: RodSpec, sizes) -> list[RodReport]:
    """Reports for each chain size in ``sizes`` at fixed mu, kappa, xi, lam."""
    reports = [rod_report(spec.with_n(int(n))) for n in sizes]
    logger.info("rod scan over N=%s", [r.N for r in reports])
    return reports


def log_log_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)),
                            np.log(np.asarray(ys, dtype=float)), 1)[0])
