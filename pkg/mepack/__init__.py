"""
mepack - maximum-entropy packets.

Classical and quantum maximum-entropy packets built from (Q, P, dQ, dP),
their evolution under polynomial potentials, the numerical maximum-entropy
dual, and the thermodynamics of a harmonic-chain rod.
"""

__version__ = "1.0.0"

from .errors import MepackError
from .packets import PacketParams, QuantumSpectral, quantum_spectrum
from .potentials import PolynomialPotential, exact_trajectory
from .trajectory import Trajectory

__all__ = [
    "__version__",
    "MepackError",
    "PacketParams",
    "QuantumSpectral",
    "quantum_spectrum",
    "PolynomialPotential",
    "exact_trajectory",
    "Trajectory",
]
