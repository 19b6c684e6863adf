"""
Exception hierarchy for mepack.

Every error carries the process exit code the CLI maps it to; numerical
diagnostics also carry the numbers that triggered them.
"""

from __future__ import annotations

from typing import Any, Mapping


class MepackError(Exception):
    """Root of all mepack errors."""

    exit_code = 1

    def __init__(self, message: str, diagnostics: Mapping[str, Any] | None = None):
        super().__init__(message)
        self.message = message
        self.diagnostics = dict(diagnostics or {})

    def __str__(self) -> str:
        if not self.diagnostics:
            return self.message
        details = ", ".join(f"{k}={v!r}" for k, v in sorted(self.diagnostics.items()))
        return f"{self.message} ({details})"


# =========================================================================
# Request errors (exit 2)
# =========================================================================

class ConfigError(MepackError):
    """Malformed, unknown or missing configuration key."""

    exit_code = 2

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message, {"key": key} if key else None)
        self.key = key


class InvalidParameterError(MepackError, ValueError):
    """A domain value violates its type invariants."""

    exit_code = 2


class UnsupportedPotentialError(InvalidParameterError):
    """Closed forms requested for a potential of degree >= 3."""


# =========================================================================
# Numerical diagnostics (exit 3)
# =========================================================================

class NumericalDiagnosticError(MepackError):
    """A solver gate tripped; see ``diagnostics`` for the measured values."""

    exit_code = 3


class ConvergenceError(NumericalDiagnosticError):
    """Iteration cap reached before the residuals fell below tolerance."""


class IntegratorInstabilityError(NumericalDiagnosticError):
    """Ensemble energy drift above the accepted bound."""


class EnsembleEscapeError(NumericalDiagnosticError):
    """A sample left the configured |q| bound or became non-finite."""


class GridCoverageError(NumericalDiagnosticError):
    """Position grid too narrow or too coarse for the packet."""


class GridLeakageError(NumericalDiagnosticError):
    """Probability reached the grid edges during propagation."""


class SpectrumTruncationError(NumericalDiagnosticError):
    """Geometric spectrum needs more terms than the hard cap."""


class InfeasibleConstraintsError(NumericalDiagnosticError):
    """Moment targets admit no distribution (non-positive variance)."""


class NoSolutionError(NumericalDiagnosticError):
    """Requested energy is at or below the zero-point energy."""


# =========================================================================
# I/O (exit 4)
# =========================================================================

class OutputError(MepackError):
    """Result files could not be written."""

    exit_code = 4
