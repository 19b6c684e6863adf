"""
Pytest configuration and fixtures for mepack tests.

These tests validate the package by:
1. Checking packet constructions against closed forms and quadrature oracles
2. Running the classical and quantum engines against the quadratic closed forms
3. Exercising the maxent dual, the rod model and the CLI end to end
"""

import math
import sys
from pathlib import Path

import pytest

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
REQUIREMENTS_DIR = PROJECT_ROOT / "docs" / "requirements"

# Make the package importable without installation
sys.path.insert(0, str(PROJECT_ROOT))

from mepack.packets import PacketParams  # noqa: E402
from mepack.potentials import PolynomialPotential  # noqa: E402
from mepack.rod_model import RodSpec  # noqa: E402


def pytest_configure(config):
    """Register custom markers for RTMX integration."""
    config.addinivalue_line("markers", "req(req_id): Link test to requirement ID")
    config.addinivalue_line("markers", "slow: long-running acceptance scenario")


@pytest.fixture
def project_root():
    """Return the project root directory."""
    return PROJECT_ROOT


@pytest.fixture
def requirements_dir():
    """Return the requirements documentation directory."""
    return REQUIREMENTS_DIR


# =========================================================================
# Packets
# =========================================================================

@pytest.fixture
def unit_packet():
    """Centred packet with dQ = dP = 1 (nu = 2)."""
    return PacketParams(Q=0.0, P=0.0, dQ=1.0, dP=1.0)


@pytest.fixture
def displaced_packet():
    """Packet displaced to Q = 1 with unit spreads, as in the harmonic acceptance run."""
    return PacketParams(Q=1.0, P=0.0, dQ=1.0, dP=1.0)


@pytest.fixture
def pure_packet():
    """Minimum-uncertainty packet (nu = 1), boosted so the phase is non-trivial."""
    spread = math.sqrt(0.5)
    return PacketParams(Q=0.3, P=0.7, dQ=spread, dP=spread)


# =========================================================================
# Potentials
# =========================================================================

@pytest.fixture
def harmonic():
    """V = q^2 / 2 with unit mass."""
    return PolynomialPotential((0.0, 0.0, 1.0), mass=1.0)


@pytest.fixture
def free():
    """V = 0 with unit mass."""
    return PolynomialPotential((0.0,), mass=1.0)


@pytest.fixture
def cubic():
    """V = 0.3 q^3 / 6 with unit mass."""
    return PolynomialPotential((0.0, 0.0, 0.0, 0.3), mass=1.0)


# =========================================================================
# Rod
# =========================================================================

@pytest.fixture
def unit_rod():
    """Chain with unit constants, N = 10 and lam = 1."""
    return RodSpec(N=10, mu=1.0, kappa=1.0, xi=0.5, lam=1.0)


# =========================================================================
# Config files
# =========================================================================

@pytest.fixture
def config_file(tmp_path):
    """Factory writing a key=value config file and returning its path."""

    def write(text: str, name: str = "run.conf") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
