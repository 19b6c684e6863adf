"""
Run configuration: documented defaults, a key=value file, command-line flags.

Later sources win: defaults < ``--config`` file < flags. Every value is
converted and validated here, before any computation starts.
"""

from __future__ import annotations

import argparse
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .errors import ConfigError
from .packets import PacketParams
from .potentials import PolynomialPotential
from .rod_model import RodSpec

SUBCOMMANDS = ("packet", "evolve", "maxent", "rod", "scan", "coincide", "moments")
THREADS_ENV = "MEPACK_THREADS"


# =========================================================================
# Blocks
# =========================================================================

@dataclass(frozen=True)
class ParamsBlock:
    Q: float = 0.0
    P: float = 0.0
    dQ: float | None = None
    dP: float | None = None
    hbar: float = 1.0
    v: float | None = None

    def packet(self) -> PacketParams:
        return PacketParams(self.Q, self.P, self.dQ, self.dP, self.hbar, self.v)


@dataclass(frozen=True)
class PotentialBlock:
    coeffs: tuple[float, ...] | None = None
    mass: float = 1.0

    def potential(self) -> PolynomialPotential:
        return PolynomialPotential(self.coeffs, self.mass)


@dataclass(frozen=True)
class NumericsBlock:
    dt: float | None = None
    n_samples: int = 100_000
    grid_points: int | None = None
    seed: int = 0
    tol: float = 1e-10
    max_iter: int = 100
    t_max: float | None = None
    n_times: int = 101
    times: tuple[float, ...] | None = None
    engine: str = "quantum"
    method: str = "monte_carlo"
    scheme: str = "position"
    scales: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    probe_times: tuple[float, ...] | None = None
    quadrature_order: int = 48
    threads: int = 1


@dataclass(frozen=True)
class RodBlock:
    N: int | None = None
    mu: float = 1.0
    kappa: float = 1.0
    xi: float = 1.0
    lam: float | None = None
    energy: float | None = None
    k_B: float = 1.0
    hbar: float = 1.0
    scan_n: tuple[int, ...] | None = None

    def spec(self) -> RodSpec:
        return RodSpec(self.N, self.mu, self.kappa, self.xi, self.lam, self.hbar, self.k_B)


@dataclass(frozen=True)
class OutputBlock:
    out: str | None = None
    format: str = "csv"
    density_dump: str | None = None


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    params: ParamsBlock = field(default_factory=ParamsBlock)
    potential: PotentialBlock = field(default_factory=PotentialBlock)
    numerics: NumericsBlock = field(default_factory=NumericsBlock)
    rod: RodBlock = field(default_factory=RodBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    verbosity: int = 0
    log_level: str | None = None

    def echo(self) -> dict[str, Any]:
        """Config as written into result headers; thread count is left out."""
        numerics = asdict(self.numerics)
        numerics.pop("threads")
        return {
            "subcommand": self.subcommand,
            "params": asdict(self.params),
            "potential": asdict(self.potential),
            "numerics": numerics,
            "rod": asdict(self.rod),
            "output": asdict(self.output),
        }


# =========================================================================
# Keys
# =========================================================================

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError("must be >= 1")
    return value


def _finite(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    return value


def _float_list(text: str) -> tuple[float, ...]:
    values = tuple(_finite(tok) for tok in text.split(",") if tok.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _int_list(text: str) -> tuple[int, ...]:
    values = tuple(_positive_int(tok) for tok in text.split(",") if tok.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _choice(*options: str) -> Callable[[str], str]:
    def convert(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return convert


@dataclass(frozen=True)
class Key:
    targets: tuple[tuple[str, str], ...]
    convert: Callable[[str], Any]
    help: str
    flags: tuple[str, ...] = ()


KEYS: dict[str, Key] = {
    "Q": Key((("params", "Q"),), _finite, "position average"),
    "P": Key((("params", "P"),), _finite, "momentum average"),
    "dQ": Key((("params", "dQ"),), _finite, "position spread"),
    "dP": Key((("params", "dP"),), _finite, "momentum spread"),
    "hbar": Key((("params", "hbar"), ("rod", "hbar")), _finite, "reduced Planck constant (1)"),
    "v": Key((("params", "v"),), _finite, "phase-space volume unit (2 pi hbar)"),
    "V": Key((("potential", "coeffs"),), _float_list, "potential Taylor coefficients V0,V1,..."),
    "mu": Key((("potential", "mass"), ("rod", "mu")), _finite, "particle mass (1)"),
    "dt": Key((("numerics", "dt"),), _finite, "time step (engine default)"),
    "n_samples": Key((("numerics", "n_samples"),), _positive_int,
                     "Monte Carlo sample count (100000)", ("--n-samples", "--n")),
    "grid_points": Key((("numerics", "grid_points"),), _positive_int,
                       "quantum grid points or maxent nodes per axis"),
    "seed": Key((("numerics", "seed"),), int, "random seed (0)"),
    "tol": Key((("numerics", "tol"),), _finite, "spectrum or solver tolerance (1e-10)"),
    "max_iter": Key((("numerics", "max_iter"),), _positive_int, "solver iteration cap (100)"),
    "t_max": Key((("numerics", "t_max"),), _finite, "final time"),
    "n_times": Key((("numerics", "n_times"),), _positive_int, "output times on [0, t_max] (101)"),
    "times": Key((("numerics", "times"),), _float_list, "explicit output times"),
    "engine": Key((("numerics", "engine"),), _choice("classical", "quantum", "exact"),
                  "evolution engine (quantum)"),
    "method": Key((("numerics", "method"),), _choice("monte_carlo", "quadrature"),
                  "classical ensemble (monte_carlo)"),
    "scheme": Key((("numerics", "scheme"),), _choice("position", "velocity"),
                  "classical leapfrog ordering (position)"),
    "scales": Key((("numerics", "scales"),), _float_list, "scan scale factors (1,2,4,8)"),
    "probe_times": Key((("numerics", "probe_times"),), _float_list,
                       "scan probe times (half the escape time)"),
    "quadrature_order": Key((("numerics", "quadrature_order"),), _positive_int,
                            "Gauss-Hermite order (48)"),
    "threads": Key((("numerics", "threads"),), _positive_int,
                   f"worker threads (${THREADS_ENV} or 1)"),
    "N": Key((("rod", "N"),), _positive_int, "number of phonon modes"),
    "kappa": Key((("rod", "kappa"),), _finite, "oscillator strength (1)"),
    "xi": Key((("rod", "xi"),), _finite, "equilibrium spacing (1)"),
    "lambda": Key((("rod", "lam"),), _finite, "inverse temperature 1/kT"),
    "energy": Key((("rod", "energy"),), _finite, "internal energy (instead of lambda)"),
    "k_B": Key((("rod", "k_B"),), _finite, "Boltzmann constant (1)"),
    "scan_n": Key((("rod", "scan_n"),), _int_list, "chain sizes for the 1/N scaling study"),
    "out": Key((("output", "out"),), str, "output path (stdout)"),
    "format": Key((("output", "format"),), _choice("csv", "json"), "output format"),
    "density_dump": Key((("output", "density_dump"),), str, "quantum density dump path"),
}

PACKET_KEYS = ("Q", "P", "dQ", "dP", "hbar", "v")
POTENTIAL_KEYS = ("V", "mu")
EVOLVE_KEYS = ("dt", "n_samples", "grid_points", "seed", "tol", "t_max", "n_times", "times",
               "engine", "method", "scheme", "quadrature_order", "threads", "density_dump")
OUTPUT_KEYS = ("out", "format")

SUBCOMMAND_KEYS: dict[str, tuple[str, ...]] = {
    "packet": PACKET_KEYS + ("tol",),
    "evolve": PACKET_KEYS + POTENTIAL_KEYS + EVOLVE_KEYS,
    "maxent": PACKET_KEYS + ("grid_points", "tol", "max_iter", "seed"),
    "rod": ("N", "mu", "kappa", "xi", "lambda", "energy", "k_B", "hbar", "scan_n"),
    "scan": PACKET_KEYS + POTENTIAL_KEYS + ("dt", "scales", "probe_times", "quadrature_order",
                                             "threads"),
    "coincide": PACKET_KEYS + POTENTIAL_KEYS + ("dt", "n_samples", "seed", "t_max", "n_times",
                                                "times", "threads"),
    "moments": PACKET_KEYS + ("tol",),
}

REQUIRED: dict[str, tuple[str, ...]] = {
    "packet": ("dQ", "dP"),
    "evolve": ("dQ", "dP", "V"),
    "maxent": ("dQ", "dP"),
    "rod": ("N",),
    "scan": ("V",),
    "coincide": ("dQ", "dP", "V"),
    "moments": ("dQ", "dP"),
}

SUBCOMMAND_HELP = {
    "packet": "packet properties: nu, entropies, spectrum",
    "evolve": "evolve a packet and write its trajectory",
    "maxent": "solve the maximum-entropy dual on a phase-space grid",
    "rod": "harmonic-chain rod thermodynamics",
    "scan": "classical-limit scan over packet scales",
    "coincide": "compare engines with closed forms for degree <= 2",
    "moments": "three-way <q^6> comparison",
}


def _flags(name: str) -> tuple[str, ...]:
    key = KEYS[name]
    return key.flags or (f"--{name.replace('_', '-')}",)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mepack",
        description="Maximum-entropy packets: construction, dynamics, rod thermodynamics.")
    subparsers = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=SUBCOMMAND_HELP[name])
        sub.add_argument("--config", metavar="FILE", help="key=value configuration file")
        sub.add_argument("-v", "--verbose", action="count", default=0,
                         help="INFO logging; twice for DEBUG")
        sub.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
        for key in SUBCOMMAND_KEYS[name] + OUTPUT_KEYS:
            sub.add_argument(*_flags(key), dest=key, metavar=key.upper(), default=argparse.SUPPRESS,
                             help=KEYS[key].help)
    return parser


# =========================================================================
# Sources
# =========================================================================

def _canonical(raw: str) -> str | None:
    wanted = raw.strip().replace("-", "_")
    for name in KEYS:
        if name == wanted:
            return name
    return None


def read_config_file(path, allowed: Sequence[str] | None = None) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment.

    With ``allowed``, keys outside it are rejected like unknown ones.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}", "config") from exc
    values: dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected key = value", line)
        raw_key, value = (part.strip() for part in line.split("=", 1))
        key = _canonical(raw_key)
        if key is None:
            raise ConfigError(f"{path}:{number}: unknown key {raw_key!r}", raw_key)
        if allowed is not None and key not in allowed:
            raise ConfigError(f"{path}:{number}: key {key!r} is not used by this command", key)
        values[key] = value
    return values


def _threads_from_env(environ: Mapping[str, str]) -> int | None:
    raw = environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        return _positive_int(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {THREADS_ENV}={raw!r}: {exc}", "threads") from exc


def parse_config(argv: Sequence[str] | None = None,
                 environ: Mapping[str, str] | None = None) -> RunConfig:
    """Merge defaults, the config file and flags into a validated RunConfig."""
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    subcommand = args.subcommand

    raw: dict[str, str] = {}
    if args.config:
        raw.update(read_config_file(args.config, SUBCOMMAND_KEYS[subcommand] + OUTPUT_KEYS))
    raw.update({k: v for k, v in vars(args).items() if k in KEYS})

    for name in REQUIRED[subcommand]:
        if name not in raw:
            raise ConfigError(f"missing required key {name!r} for {subcommand}", name)

    blocks: dict[str, dict[str, Any]] = {b: {} for b in ("params", "potential", "numerics",
                                                         "rod", "output")}
    for name, text in raw.items():
        key = KEYS[name]
        try:
            value = key.convert(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value {text!r} for {name!r}: {exc}", name) from exc
        for block, attr in key.targets:
            blocks[block][attr] = value

    env_threads = _threads_from_env(environ)
    if env_threads is not None:
        # the environment caps the thread count, it never raises it
        requested = blocks["numerics"].get("threads", env_threads)
        blocks["numerics"]["threads"] = min(requested, env_threads)
    if subcommand == "scan":
        # minimum-uncertainty base packet unless spreads are given
        spread = math.sqrt(float(blocks["params"].get("hbar", 1.0)) / 2.0)
        blocks["params"].setdefault("dQ", spread)
        blocks["params"].setdefault("dP", spread)
    output = blocks["output"]
    if "format" not in output and (subcommand == "maxent"
                                   or str(output.get("out", "")).endswith(".json")):
        output["format"] = "json"

    config = RunConfig(
        subcommand=subcommand,
        params=ParamsBlock(**blocks["params"]),
        potential=PotentialBlock(**blocks["potential"]),
        numerics=NumericsBlock(**blocks["numerics"]),
        rod=RodBlock(**blocks["rod"]),
        output=OutputBlock(**output),
        verbosity=args.verbose,
        log_level=args.log_level,
    )
    validate(config)
    return config


def validate(config: RunConfig) -> None:
    """Build every domain object the subcommand needs; raise on the first bad value."""
    name = config.subcommand
    if name != "rod":
        config.params.packet()
    if name in ("evolve", "scan", "coincide"):
        config.potential.potential()
    if name == "rod":
        rod = config.rod
        if (rod.lam is None) == (rod.energy is None):
            raise ConfigError("rod needs exactly one of lambda or energy", "lambda")
        rod.spec()
    numerics = config.numerics
    if name in ("evolve", "coincide") and numerics.times is None and numerics.t_max is None:
        raise ConfigError(f"{name} needs t_max or times", "t_max")
    if numerics.dt is not None and numerics.dt <= 0:
        raise ConfigError("dt must be positive", "dt")
    if not 0.0 < numerics.tol < 1.0:
        raise ConfigError("tol must lie in (0, 1)", "tol")
    if numerics.t_max is not None and numerics.t_max < 0:
        raise ConfigError("t_max must be non-negative", "t_max")
    if numerics.times is not None and any(b < a for a, b in zip(numerics.times, numerics.times[1:])):
        raise ConfigError("times must be ascending", "times")
    if any(s <= 0 for s in numerics.scales):
        raise ConfigError("scales must be positive", "scales")
