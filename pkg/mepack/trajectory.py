"""
Trajectory of a fuzzy state: the quadruple (Q, P, dQ, dP) over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidParameterError

KINDS = ("classical", "quantum", "exact")
COMPONENTS = ("Q", "P", "dQ", "dP")
COLUMN_UNITS = {"t": "time", "Q": "length", "P": "momentum", "dQ": "length", "dP": "momentum"}


@dataclass
class Trajectory:
    """Time series of the four state coordinates with provenance.

    ``stderr`` holds per-time standard errors of the components (shape
    4 x n_times) for Monte Carlo runs and is None otherwise.
    """

    times: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    dQ: np.ndarray
    dP: np.ndarray
    kind: str
    meta: dict[str, Any] = field(default_factory=dict)
    stderr: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown trajectory kind {self.kind!r}")
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        n = self.times.size
        for name in COMPONENTS:
            values = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if values.shape != (n,):
                raise InvalidParameterError(
                    f"component {name} has {values.size} entries for {n} times")
            setattr(self, name, values)
        if np.any(self.dQ <= 0) or np.any(self.dP <= 0):
            raise InvalidParameterError("trajectory spreads must be strictly positive")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float).reshape(4, n)

    def __len__(self) -> int:
        return self.times.size

    def component(self, name: str) -> np.ndarray:
        if name not in COMPONENTS:
            raise InvalidParameterError(f"unknown component {name!r}")
        return getattr(self, name)

    def state_at(self, index: int) -> tuple[float, float, float, float]:
        return tuple(float(self.component(c)[index]) for c in COMPONENTS)

    def rows(self) -> list[list[float]]:
        return [[float(t), *self.state_at(i)] for i, t in enumerate(self.times)]

    def deviation_from(self, reference: "Trajectory") -> dict[str, np.ndarray]:
        """Per-component deviation normalized by the reference scale.

        Q and P are divided by max(|x_ref|, spread_ref) so that zero
        crossings do not blow the ratio up; dQ and dP by their own value.
        """
        if not np.array_equal(self.times, reference.times):
            raise InvalidParameterError("trajectories sampled on different times")
        scales = {
            "Q": np.maximum(np.abs(reference.Q), reference.dQ),
            "P": np.maximum(np.abs(reference.P), reference.dP),
            "dQ": reference.dQ,
            "dP": reference.dP,
        }
        return {c: np.abs(self.component(c) - reference.component(c)) / scales[c]
                for c in COMPONENTS}

    def to_dict(self) -> dict[str, Any]:
        out = {"kind": self.kind, "meta": self.meta, "times": self.times.tolist()}
        for c in COMPONENTS:
            out[c] = self.component(c).tolist()
        if self.stderr is not None:
            out["stderr"] = {c: self.stderr[i].tolist() for i, c in enumerate(COMPONENTS)}
        return out


def time_grid(t_max: float, n_times: int) -> np.ndarray:
    if t_max < 0 or n_times < 1:
        raise InvalidParameterError("time grid needs t_max >= 0 and n_times >= 1",
                                    {"t_max": t_max, "n_times": n_times})
    return np.linspace(0.0, t_max, n_times) if n_times > 1 else np.array([t_max])


def step_schedule(times, dt: float) -> list[tuple[int, float]]:
    """Step counts and step lengths reaching each requested time exactly.

    Integration starts at t = 0; interval k runs from times[k-1] (or 0) to
    times[k] in ceil(span / dt) equal steps.
    """
    times = np.asarray(times, dtype=float)
    if not dt > 0:
        raise InvalidParameterError("time step must be positive", {"dt": dt})
    if times.size == 0 or times[0] < 0 or np.any(np.diff(times) < 0):
        raise InvalidParameterError("times must be non-negative and ascending")
    schedule = []
    previous = 0.0
    for t in times:
        span = float(t) - previous
        if span <= 0.0:
            schedule.append((0, 0.0))
        else:
            n_steps = max(1, math.ceil(span / dt - 1e-9))
            schedule.append((n_steps, span / n_steps))
        previous = float(t)
    return schedule
