from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal, TypedDict

import numpy as np

from ..errors import InputError

Scheme = Literal["reflection", "maximal", "coupled"]

RECORD_SCHEMA_VERSION = 1
RECORD_COLUMNS: tuple[str, ...] = (
    "sample_index",
    "tau_c",
    "censored",
    "tau_eps1",
    "kappa_x",
    "kappa_y",
    "xi1",
    "steps",
    "exit_time",
    "exit_y",
)


class RecordRow(TypedDict):
    sample_index: int
    tau_c: float
    censored: bool
    tau_eps1: float | None
    kappa_x: float | None
    kappa_y: float | None
    xi1: float | None
    steps: int
    exit_time: float | None
    exit_y: float | None


@dataclass(frozen=True)
class SimParams:
    epsilon: float
    step: float
    threshold_factor: float = 2.0
    max_time: float = 1.0e4
    seed: int = 0
    divergence_radius: float = 1.0e6

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.step > 0:
            raise InputError(f"step must be > 0, got {self.step}")
        if not self.max_time >= self.step:
            raise InputError(f"max_time must be >= step, got {self.max_time} < {self.step}")
        if not self.divergence_radius > 0:
            raise InputError(f"divergence_radius must be > 0, got {self.divergence_radius}")
        if self.threshold_factor < 0:
            raise InputError(f"threshold_factor must be >= 0, got {self.threshold_factor}")
        if not 0 <= self.seed < 2**64:
            raise InputError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def noise_scale(self) -> float:
        return self.epsilon * math.sqrt(self.step)

    @property
    def threshold(self) -> float:
        # d = factor * eps * sqrt(h)
        return self.threshold_factor * self.noise_scale

    @property
    def max_steps(self) -> int:
        return int(math.floor(self.max_time / self.step + 1e-9))

    def to_dict(self) -> dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "step": self.step,
            "threshold_factor": self.threshold_factor,
            "max_time": self.max_time,
            "seed": self.seed,
            "divergence_radius": self.divergence_radius,
        }


@dataclass(frozen=True)
class CoupledState:
    x: np.ndarray
    y: np.ndarray
    time: float
    scheme: Scheme
    rng: np.random.Generator = field(compare=False, repr=False)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.x - self.y))


@dataclass(frozen=True)
class InitCondition:
    """Initial law of (X0, Y0): each side is either a fixed point or uniform on a box [lo, hi]^k."""

    x0: tuple[float, ...] | None = None
    y0: tuple[float, ...] | None = None
    x_box: tuple[float, float] | None = None
    y_box: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        for name, point, box in (("x", self.x0, self.x_box), ("y", self.y0, self.y_box)):
            if (point is None) == (box is None):
                raise InputError(f"init: give exactly one of {name}0 or {name}_box")
            if box is not None and not box[0] < box[1]:
                raise InputError(f"init: {name}_box must satisfy lo < hi, got {box}")

    @classmethod
    def points(cls, x0: Any, y0: Any) -> "InitCondition":
        return cls(x0=tuple(float(v) for v in np.ravel(x0)), y0=tuple(float(v) for v in np.ravel(y0)))

    def draw(self, rng: np.random.Generator, size: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
        x = _draw_side(self.x0, self.x_box, rng, size, dim, "x0")
        y = _draw_side(self.y0, self.y_box, rng, size, dim, "y0")
        return x, y

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.x0 is not None:
            out["x0"] = list(self.x0)
        if self.y0 is not None:
            out["y0"] = list(self.y0)
        if self.x_box is not None:
            out["x_box"] = list(self.x_box)
        if self.y_box is not None:
            out["y_box"] = list(self.y_box)
        return out


def _draw_side(
    point: tuple[float, ...] | None,
    box: tuple[float, float] | None,
    rng: np.random.Generator,
    size: int,
    dim: int,
    name: str,
) -> np.ndarray:
    if point is not None:
        if len(point) != dim:
            raise InputError(f"init: {name} has length {len(point)}, potential dimension is {dim}")
        return np.tile(np.asarray(point, dtype=float), (size, 1))
    assert box is not None
    return rng.uniform(box[0], box[1], size=(size, dim))


@dataclass(frozen=True)
class InstrumentConfig:
    basins: bool = False
    stop_on_exit: bool = False
    run_until_xi1: bool = False
    basin_check_stride: int = 10

    def __post_init__(self) -> None:
        if self.basin_check_stride < 1:
            raise InputError("basin_check_stride must be >= 1")
        if (self.stop_on_exit or self.run_until_xi1) and not self.basins:
            raise InputError("stop_on_exit and run_until_xi1 need basins=True")

    def to_dict(self) -> dict[str, Any]:
        return {
            "basins": self.basins,
            "stop_on_exit": self.stop_on_exit,
            "run_until_xi1": self.run_until_xi1,
            "basin_check_stride": self.basin_check_stride,
        }


@dataclass(frozen=True)
class CouplingRecord:
    sample_index: int
    tau_c: float
    censored: bool
    steps: int
    tau_eps1: float | None = None
    kappa_x: float | None = None
    kappa_y: float | None = None
    xi1: float | None = None
    exit_time: float | None = None
    exit_y: float | None = None
    basin_trace_enabled: bool = False

    @property
    def overshoot(self) -> float | None:
        if self.xi1 is None or self.kappa_x is None or self.kappa_y is None:
            return None
        return self.xi1 - max(self.kappa_x, self.kappa_y)

    @property
    def tau_eps(self) -> float:
        """min(tau_c, exit_time), with censored tau_c standing in for 'not coupled'."""
        if self.exit_time is None:
            return self.tau_c
        if self.censored:
            return self.exit_time
        return min(self.tau_c, self.exit_time)

    @property
    def coupled_before_exit(self) -> bool:
        if self.censored:
            return False
        return self.exit_time is None or self.tau_c <= self.exit_time

    def to_row(self) -> RecordRow:
        return {
            "sample_index": self.sample_index,
            "tau_c": self.tau_c,
            "censored": self.censored,
            "tau_eps1": self.tau_eps1,
            "kappa_x": self.kappa_x,
            "kappa_y": self.kappa_y,
            "xi1": self.xi1,
            "steps": self.steps,
            "exit_time": self.exit_time,
            "exit_y": self.exit_y,
        }

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> "CouplingRecord":
        def opt(key: str) -> float | None:
            v = row.get(key)
            if v is None or v == "":
                return None
            f = float(v)
            return None if math.isnan(f) else f

        censored = row["censored"]
        if isinstance(censored, str):
            censored = censored.strip().lower() in ("1", "true")
        return cls(
            sample_index=int(row["sample_index"]),
            tau_c=float(row["tau_c"]),
            censored=bool(censored),
            steps=int(row["steps"]),
            tau_eps1=opt("tau_eps1"),
            kappa_x=opt("kappa_x"),
            kappa_y=opt("kappa_y"),
            xi1=opt("xi1"),
            exit_time=opt("exit_time"),
            exit_y=opt("exit_y"),
        )


@dataclass(frozen=True)
class SampleFailure:
    sample_index: int
    reason: str
    last_iterate: tuple[tuple[float, ...], tuple[float, ...]] | None = None
