"""
Command-line entry point.

Exit codes: 0 success, 2 configuration or parameter error, 3 numerical
diagnostic failure, 4 output error.
"""

from __future__ import annotations

import logging
import sys
from typing import Any, Callable, Sequence

from . import io
from .classical_engine import evolve_classical
from .config import RunConfig, parse_config
from .errors import MepackError, NumericalDiagnosticError
from .experiments import cubic_moment_check, limit_scan, quadratic_coincidence
from .maxent_solver import (
    MomentConstraints,
    entropy_maximality_witness,
    l1_distance_to_analytic,
    solve_dual,
)
from .packets import classical_entropy, exponent_coefficient, quantum_entropy, quantum_spectrum
from .potentials import exact_trajectory
from .quantum_engine import run_quantum, write_density_dump
from .rod_model import RodReport, lambda_from_energy, log_log_slope, rod_report, scan_n
from .trajectory import COLUMN_UNITS, time_grid

logger = logging.getLogger("mepack")

EXIT_OK = 0
EXIT_DIAGNOSTIC = NumericalDiagnosticError.exit_code
KEY_VALUE_COLUMNS = (("quantity", ""), ("value", ""))
TRAJECTORY_COLUMNS = tuple((name, unit) for name, unit in COLUMN_UNITS.items())
DEFAULT_SCAN_DT = 0.01

Outcome = tuple[Sequence[tuple[str, str]], list[list[Any]], Any, int]


def configure_logging(config: RunConfig) -> logging.Handler:
    """Attach a stderr handler to the package logger; the caller removes it."""
    if config.log_level:
        level = getattr(logging, config.log_level)
    elif config.verbosity >= 2:
        level = logging.DEBUG
    elif config.verbosity == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    return handler


def _key_values(result: dict) -> list[list[Any]]:
    return [[name, value] for name, value in sorted(result.items())]


def _times(config: RunConfig):
    numerics = config.numerics
    if numerics.times is not None:
        return list(numerics.times)
    return time_grid(numerics.t_max, numerics.n_times)


# =========================================================================
# Subcommands
# =========================================================================

def run_packet(config: RunConfig) -> Outcome:
    params = config.params.packet()
    result: dict[str, Any] = {
        "nu": params.nu,
        "classical_entropy": classical_entropy(params),
        "length_scale": params.length_scale,
    }
    if params.nu >= 1.0:
        spectrum = quantum_spectrum(params, config.numerics.tol)
        result.update({
            "exponent_coefficient": exponent_coefficient(params.nu),
            "quantum_entropy": quantum_entropy(params),
            "ratio": spectrum.ratio,
            "n_max": spectrum.n_max,
            "purity": spectrum.purity,
            "trace": spectrum.trace,
        })
    else:
        logger.warning("nu=%.6g < 1: no quantum packet exists", params.nu)
    return KEY_VALUE_COLUMNS, _key_values(result), result, EXIT_OK


def run_evolve(config: RunConfig) -> Outcome:
    params = config.params.packet()
    potential = config.potential.potential()
    numerics = config.numerics
    times = _times(config)
    if numerics.engine == "exact":
        trajectory = exact_trajectory(params, potential, times)
    elif numerics.engine == "classical":
        trajectory = evolve_classical(
            params, potential, times, numerics.dt, numerics.n_samples, numerics.seed,
            scheme=numerics.scheme, method=numerics.method,
            quadrature_order=numerics.quadrature_order, threads=numerics.threads)
    else:
        trajectory, state = run_quantum(params, potential, times, numerics.dt, numerics.tol,
                                        numerics.grid_points, numerics.threads, return_state=True)
        if config.output.density_dump:
            write_density_dump(config.output.density_dump, state)
    return TRAJECTORY_COLUMNS, trajectory.rows(), trajectory.to_dict(), EXIT_OK


def run_maxent(config: RunConfig) -> Outcome:
    params = config.params.packet()
    numerics = config.numerics
    constraints = MomentConstraints.from_params(params, numerics.grid_points or 512)
    solution = solve_dual(constraints, numerics.tol, numerics.max_iter)
    witness = entropy_maximality_witness(solution, seed=numerics.seed)
    result = solution.summary()
    result["l1_distance"] = l1_distance_to_analytic(solution, params)
    result["maximality_witness"] = {
        "trials": witness.trials,
        "max_entropy_gain": witness.max_entropy_gain,
        "passed": witness.passed,
    }
    rows = [[f"lambda{i + 1}", value] for i, value in enumerate(result["multipliers"])]
    rows += [["l1_distance", result["l1_distance"]], ["entropy", result["entropy"]],
             ["iterations", result["iterations"]], ["witness_passed", witness.passed]]
    status = EXIT_OK if witness.passed else EXIT_DIAGNOSTIC
    return KEY_VALUE_COLUMNS, rows, result, status


def run_rod(config: RunConfig) -> Outcome:
    block = config.rod
    spec = block.spec()
    if block.energy is not None:
        spec = spec.with_lambda(lambda_from_energy(spec, block.energy))
    if block.scan_n:
        reports = scan_n(spec, block.scan_n)
        sizes = [r.N for r in reports]
        result = {
            "rows": [r.as_dict() for r in reports],
            "length_slope": log_log_slope(sizes, [r.relative_length_variance for r in reports]),
            "energy_slope": log_log_slope(sizes, [r.relative_energy_variance for r in reports]),
        } if len(reports) > 1 else {"rows": [r.as_dict() for r in reports]}
    else:
        reports = [rod_report(spec)]
        result = reports[0].as_dict()
    return RodReport.COLUMNS, [r.row() for r in reports], result, EXIT_OK


def run_scan(config: RunConfig) -> Outcome:
    numerics = config.numerics
    report = limit_scan(config.params.packet(), config.potential.potential(),
                        numerics.probe_times, numerics.scales,
                        dt=numerics.dt or DEFAULT_SCAN_DT,
                        quadrature_order=numerics.quadrature_order, threads=numerics.threads)
    summary = report.summary()
    status = EXIT_OK if summary["passed"] and not summary["aborted_points"] else EXIT_DIAGNOSTIC
    return report.COLUMNS, report.rows(), {"summary": summary, "rows": report.rows()}, status


def run_coincide(config: RunConfig) -> Outcome:
    numerics = config.numerics
    report = quadratic_coincidence(
        config.params.packet(), config.potential.potential(), _times(config),
        n=numerics.n_samples, seed=numerics.seed, dt_classical=numerics.dt,
        dt_quantum=numerics.dt, threads=numerics.threads)
    summary = report.summary()
    status = EXIT_OK if summary["passed"] else EXIT_DIAGNOSTIC
    return report.COLUMNS, report.rows(), {"summary": summary}, status


def run_moments(config: RunConfig) -> Outcome:
    record = cubic_moment_check(config.params.packet(), config.numerics.tol)
    return record.COLUMNS, record.rows(), record.summary(), EXIT_OK


HANDLERS: dict[str, Callable[[RunConfig], Outcome]] = {
    "packet": run_packet,
    "evolve": run_evolve,
    "maxent": run_maxent,
    "rod": run_rod,
    "scan": run_scan,
    "coincide": run_coincide,
    "moments": run_moments,
}


# =========================================================================
# Entry points
# =========================================================================

def run(config: RunConfig) -> int:
    """Dispatch ``config`` and write its output; returns the exit status."""
    logger.info("running %s", config.subcommand)
    columns, rows, result, status = HANDLERS[config.subcommand](config)
    echo = config.echo()
    if config.output.format == "json":
        text = io.render_json(result, echo)
    else:
        text = io.render_csv(columns, rows, echo)
    if config.output.out:
        io.atomic_write_text(config.output.out, text)
    else:
        sys.stdout.write(text)
    return status


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = parse_config(argv)
    except MepackError as exc:
        print(f"mepack: error: {exc}", file=sys.stderr)
        return exc.exit_code
    handler = configure_logging(config)
    try:
        return run(config)
    except MepackError as exc:
        print(f"mepack: error: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        logger.removeHandler(handler)
        logger.setLevel(logging.NOTSET)


if __name__ == "__main__":
    sys.exit(main())
