"""Run configuration: a versioned JSON document plus environment and flag overrides.

Precedence, highest first: command-line flag, ``LANGEVIN_COUPLING_*`` environment
variable, config file, built-in default.
"""
from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, Mapping

from .coupling.batch import DEFAULT_BLOCK_SIZE, SamplingBudget
from .errors import ConfigError, InputError
from .estimation.tail import GridConfig
from .experiments.plans import ExperimentPlan, case_from_dict, default_plan
from .landscape.potentials import PotentialSpec, potential_from_dict
from .protocol.types import InitCondition, InstrumentConfig, SimParams

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENV_PREFIX = "LANGEVIN_COUPLING_"

OracleMethod = Literal["grid", "string", "both"]

_TOP_KEYS = {
    "schema_version", "seed", "workers", "out", "budget", "block_size", "progress_hz", "log_level",
    "potential", "epsilons", "step", "max_time", "threshold_factor", "divergence_radius",
    "init", "instrument", "grid", "use_smallest", "flatness_tol", "oracle", "experiment",
}
_SECTION_KEYS: dict[str, set[str]] = {
    "init": {"x0", "y0", "x_box", "y_box"},
    "instrument": {"basins", "stop_on_exit", "run_until_xi1", "basin_check_stride"},
    "grid": {"points", "spacing", "min_uncensored", "z", "alpha", "min_tail_points"},
    "oracle": {"method", "bounds", "resolution", "diagonal", "start", "end", "images", "iters", "step", "tol", "waypoints"},
    "experiment": {"name", "cases", "steps", "fine_divisors", "times", "use_smallest", "flatness_tol"},
}
# (key, env suffix, parser)
_OVERRIDES: tuple[tuple[str, str, Any], ...] = (
    ("seed", "SEED", int),
    ("workers", "WORKERS", int),
    ("out", "OUT", str),
    ("budget", "BUDGET", int),
    ("log_level", "LOG_LEVEL", str),
)


@dataclass(frozen=True)
class OracleConfig:
    method: OracleMethod = "both"
    bounds: tuple[tuple[float, float], ...] = ()
    resolution: int = 401
    diagonal: bool = False
    start: tuple[float, ...] | None = None
    end: tuple[float, ...] | None = None
    images: int = 64
    iters: int = 20_000
    step: float = 1.0e-3
    tol: float = 1.0e-7
    waypoints: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self) -> None:
        if self.method not in ("grid", "string", "both"):
            raise InputError(f"oracle.method must be grid, string or both, got {self.method!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "bounds": [list(b) for b in self.bounds],
            "resolution": self.resolution,
            "diagonal": self.diagonal,
            "start": list(self.start) if self.start is not None else None,
            "end": list(self.end) if self.end is not None else None,
            "images": self.images,
            "iters": self.iters,
            "step": self.step,
            "tol": self.tol,
            "waypoints": [list(w) for w in self.waypoints],
        }


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    out: str = "runs"
    budget: int = 100_000
    block_size: int = DEFAULT_BLOCK_SIZE
    progress_hz: float = 1.0
    log_level: str = "INFO"
    potential: PotentialSpec | None = None
    epsilons: tuple[float, ...] = ()
    step: float | None = None
    max_time: float | None = None
    threshold_factor: float | None = None
    divergence_radius: float | None = None
    init: InitCondition | None = None
    instrument: InstrumentConfig = InstrumentConfig()
    grid: GridConfig | None = None
    use_smallest: int | None = None
    flatness_tol: float = 0.25
    oracle: OracleConfig = OracleConfig()
    experiment: Mapping[str, Any] = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}", key="seed")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}", key="workers")
        if self.budget < 0:
            raise ConfigError(f"budget must be >= 0, got {self.budget}", key="budget")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}", key="block_size")
        if any(not e > 0 for e in self.epsilons):
            raise ConfigError("epsilons must all be > 0", key="epsilons")

    @property
    def grid_config(self) -> GridConfig:
        return self.grid or GridConfig()

    def sampling_budget(self) -> SamplingBudget:
        return SamplingBudget(samples=self.budget, workers=self.workers, block_size=self.block_size)

    def sim_params(self, epsilon: float, seed: int | None = None) -> SimParams:
        kw: dict[str, Any] = {}
        for name in ("step", "max_time", "threshold_factor", "divergence_radius"):
            v = getattr(self, name)
            if v is not None:
                kw[name] = v
        kw.setdefault("step", 1.0e-3)
        return SimParams(epsilon=epsilon, seed=self.seed if seed is None else seed, **kw)

    def require_potential(self) -> PotentialSpec:
        if self.potential is None:
            raise ConfigError("this command needs a 'potential' table", key="potential")
        return self.potential

    def require_init(self) -> InitCondition:
        if self.init is None:
            raise ConfigError("this command needs an 'init' table", key="init")
        return self.init

    def plan(self, name: str | None = None) -> ExperimentPlan:
        """Reference plan for the experiment, with this config's budget, seed and overrides applied."""
        exp = dict(self.experiment)
        name = name or exp.get("name")
        if not name:
            raise ConfigError("no experiment name given", key="experiment.name")
        base = default_plan(name, seed=self.seed, budget=self.sampling_budget())
        changes: dict[str, Any] = {}
        if "cases" in exp:
            try:
                changes["cases"] = tuple(case_from_dict(c) for c in exp["cases"])
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"experiment.cases: malformed case ({exc})", key="experiment.cases") from exc
        for key in ("steps", "times"):
            if key in exp:
                changes[key] = tuple(float(v) for v in exp[key])
        if "fine_divisors" in exp:
            changes["fine_divisors"] = tuple(int(v) for v in exp["fine_divisors"])
        if "use_smallest" in exp:
            changes["use_smallest"] = exp["use_smallest"]
        elif self.use_smallest is not None:
            changes["use_smallest"] = self.use_smallest
        if "flatness_tol" in exp:
            changes["flatness_tol"] = float(exp["flatness_tol"])
        if self.grid is not None:
            changes["grid"] = self.grid
        for key in ("step", "max_time", "threshold_factor"):
            v = getattr(self, key)
            if v is not None:
                changes[key] = v
        plan = replace(base, **changes)
        if self.epsilons and "cases" not in exp:
            plan = plan.with_overrides(epsilons=self.epsilons)
        return plan

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "workers": self.workers,
            "out": self.out,
            "budget": self.budget,
            "block_size": self.block_size,
            "progress_hz": self.progress_hz,
            "log_level": self.log_level,
            "potential": self.potential.to_dict() if self.potential is not None else None,
            "epsilons": list(self.epsilons),
            "step": self.step,
            "max_time": self.max_time,
            "threshold_factor": self.threshold_factor,
            "divergence_radius": self.divergence_radius,
            "init": self.init.to_dict() if self.init is not None else None,
            "instrument": self.instrument.to_dict(),
            "grid": self.grid_config.to_dict(),
            "use_smallest": self.use_smallest,
            "flatness_tol": self.flatness_tol,
            "oracle": self.oracle.to_dict(),
            "experiment": dict(self.experiment),
            "source": self.source,
        }


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _check_keys(raw: Mapping[str, Any], text: str) -> None:
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}", key=key, line=_line_of(text, key))
    for section, allowed in _SECTION_KEYS.items():
        value = raw.get(section)
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{section} must be a table", key=section, line=_line_of(text, section))
        for key in value:
            if key not in allowed:
                raise ConfigError(f"unknown key {section}.{key}", key=f"{section}.{key}", line=_line_of(text, key))


def parse_document(text: str) -> dict[str, Any]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", line=1)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}",
            key="schema_version",
            line=_line_of(text, "schema_version"),
        )
    _check_keys(raw, text)
    return raw


def _tuple(v: Any) -> tuple[float, ...] | None:
    return None if v is None else tuple(float(x) for x in v)


def _build(raw: Mapping[str, Any], text: str, source: str | None) -> RunConfig:
    def section(name: str, build: Any) -> Any:
        value = raw.get(name)
        if value is None:
            return None
        try:
            return build(value)
        except (InputError, TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}", key=name, line=_line_of(text, name)) from exc

    def oracle(v: dict[str, Any]) -> OracleConfig:
        kw = dict(v)
        if "bounds" in kw:
            kw["bounds"] = tuple((float(lo), float(hi)) for lo, hi in kw["bounds"])
        for key in ("start", "end"):
            if key in kw:
                kw[key] = _tuple(kw[key])
        if "waypoints" in kw:
            kw["waypoints"] = tuple(_tuple(w) for w in kw["waypoints"])
        return OracleConfig(**kw)

    def init(v: dict[str, Any]) -> InitCondition:
        return InitCondition(**{k: _tuple(x) for k, x in v.items()})

    def potential(v: dict[str, Any]) -> PotentialSpec:
        return potential_from_dict(v)

    kw: dict[str, Any] = {"source": source}
    for key, cast in (
        ("seed", int), ("workers", int), ("out", str), ("budget", int), ("block_size", int),
        ("progress_hz", float), ("log_level", str), ("step", float), ("max_time", float),
        ("threshold_factor", float), ("divergence_radius", float), ("use_smallest", int), ("flatness_tol", float),
    ):
        if raw.get(key) is not None:
            try:
                kw[key] = cast(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}", key=key, line=_line_of(text, key)) from exc
    if "epsilons" in raw:
        kw["epsilons"] = section("epsilons", lambda v: tuple(float(e) for e in v))
    if raw.get("potential") is not None:
        kw["potential"] = section("potential", potential)
    if raw.get("init") is not None:
        kw["init"] = section("init", init)
    if raw.get("instrument") is not None:
        kw["instrument"] = section("instrument", lambda v: InstrumentConfig(**v))
    if raw.get("grid") is not None:
        kw["grid"] = section("grid", lambda v: GridConfig(**v))
    if raw.get("oracle") is not None:
        kw["oracle"] = section("oracle", oracle)
    if raw.get("experiment") is not None:
        kw["experiment"] = dict(raw["experiment"])
    return RunConfig(**kw)


def _layer(raw: dict[str, Any], environ: Mapping[str, str], flags: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(raw)
    for key, suffix, cast in _OVERRIDES:
        env_key = ENV_PREFIX + suffix
        if env_key in environ and environ[env_key] != "":
            try:
                out[key] = cast(environ[env_key])
            except ValueError as exc:
                raise ConfigError(f"{env_key}: {exc}", key=env_key) from exc
        if flags.get(key) is not None:
            out[key] = flags[key]
    return out


def load_config(
    path: str | os.PathLike[str] | None = None,
    *,
    flags: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    text = ""
    raw: dict[str, Any] = {}
    source = None
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}", key="config") from exc
        raw = parse_document(text)
        source = str(p)
    merged = _layer(raw, os.environ if environ is None else environ, flags or {})
    cfg = _build(merged, text, source)
    logger.debug("config resolved from %s", source or "defaults")
    return cfg
