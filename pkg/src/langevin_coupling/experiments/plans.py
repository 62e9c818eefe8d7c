from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Literal, get_args

import numpy as np

from ..coupling.batch import BatchResult, SamplingBudget
from ..errors import InputError
from ..estimation.tail import GridConfig
from ..landscape.basins import BasinLabeler, reference_minima
from ..landscape.potentials import (
    AnnLoss,
    DoubleWell1D,
    InteractingParticles,
    LehmerQuadratic,
    PotentialSpec,
    Rosenbrock,
    potential_from_dict,
)
from ..protocol.types import InitCondition, SimParams

logger = logging.getLogger(__name__)

ExperimentName = Literal[
    "quadratic_tails",
    "step_size",
    "double_well_barrier",
    "h1_check",
    "h2_check",
    "h3_check",
    "ips_barrier",
    "rosenbrock_tails",
    "ann_barrier",
]
EXPERIMENT_NAMES: tuple[str, ...] = get_args(ExperimentName)

# minima of x^4 - 2x^2 + 0.2x, and the boundary start of the local-coupling check
DW_LEFT = -1.0241
DW_RIGHT = 0.9740
DW_BOUNDARY = 0.05129


@dataclass(frozen=True)
class LandscapeCase:
    label: str
    potential: PotentialSpec
    epsilons: tuple[float, ...]
    init: InitCondition
    max_time: float | None = None

    def __post_init__(self) -> None:
        if not self.epsilons:
            raise InputError(f"case {self.label!r}: epsilon grid is empty")
        if any(not e > 0 for e in self.epsilons):
            raise InputError(f"case {self.label!r}: epsilons must be > 0")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "label": self.label,
            "potential": self.potential.to_dict(),
            "epsilons": list(self.epsilons),
            "init": self.init.to_dict(),
        }
        if self.max_time is not None:
            out["max_time"] = self.max_time
        return out


@dataclass(frozen=True)
class ExperimentPlan:
    name: ExperimentName
    cases: tuple[LandscapeCase, ...]
    step: float = 1.0e-3
    budget: SamplingBudget = SamplingBudget()
    max_time: float = 1.0e4
    threshold_factor: float = 2.0
    seed: int = 0
    grid: GridConfig = GridConfig()
    use_smallest: int | None = None
    flatness_tol: float = 0.25
    # step-size study
    steps: tuple[float, ...] = ()
    fine_divisors: tuple[int, ...] = (2, 4, 8, 16)
    # conditional-frequency times for the H1 check; empty means data-driven
    times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.name not in EXPERIMENT_NAMES:
            raise InputError(f"unknown experiment {self.name!r}; expected one of {', '.join(EXPERIMENT_NAMES)}")
        if not self.cases:
            raise InputError(f"experiment {self.name}: no cases")
        if self.name == "step_size":
            if not self.steps:
                raise InputError("step_size: step grid is empty")
            if any(n < 1 for n in self.fine_divisors) or len(self.fine_divisors) < 2:
                raise InputError("step_size: need at least two fine divisors >= 1")
        if self.name in ("h1_check", "h3_check"):
            for case in self.cases:
                _check_split_start(self.name, case)

    def params(self, epsilon: float, seed: int, case: LandscapeCase | None = None, step: float | None = None) -> SimParams:
        max_time = case.max_time if case is not None and case.max_time is not None else self.max_time
        return SimParams(
            epsilon=epsilon,
            step=self.step if step is None else step,
            threshold_factor=self.threshold_factor,
            max_time=max_time,
            seed=seed,
        )

    def base_params(self, case: LandscapeCase) -> SimParams:
        return self.params(case.epsilons[0], self.seed, case)

    def with_overrides(
        self,
        *,
        samples: int | None = None,
        workers: int | None = None,
        seed: int | None = None,
        epsilons: tuple[float, ...] | None = None,
        step: float | None = None,
        max_time: float | None = None,
        block_size: int | None = None,
    ) -> "ExperimentPlan":
        budget = replace(
            self.budget,
            samples=self.budget.samples if samples is None else samples,
            workers=self.budget.workers if workers is None else workers,
            block_size=self.budget.block_size if block_size is None else block_size,
        )
        cases = self.cases
        if epsilons is not None:
            cases = tuple(replace(c, epsilons=tuple(epsilons)) for c in cases)
        return replace(
            self,
            budget=budget,
            cases=cases,
            seed=self.seed if seed is None else seed,
            step=self.step if step is None else step,
            max_time=self.max_time if max_time is None else max_time,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "cases": [c.to_dict() for c in self.cases],
            "step": self.step,
            "budget": self.budget.to_dict(),
            "max_time": self.max_time,
            "threshold_factor": self.threshold_factor,
            "seed": self.seed,
            "grid": self.grid.to_dict(),
            "use_smallest": self.use_smallest,
            "flatness_tol": self.flatness_tol,
            "steps": list(self.steps),
            "fine_divisors": list(self.fine_divisors),
            "times": list(self.times),
        }


def _check_split_start(name: str, case: LandscapeCase) -> None:
    init = case.init
    if init.x0 is None or init.y0 is None:
        raise InputError(f"{name}: case {case.label!r} needs fixed starting points")
    labels = BasinLabeler(case.potential)
    lx = int(labels(np.asarray([init.x0]))[0])
    ly = int(labels(np.asarray([init.y0]))[0])
    if ly != 1:
        raise InputError(f"{name}: case {case.label!r} must start Y in the global basin")
    if name == "h3_check" and lx == ly:
        raise InputError(f"h3_check: case {case.label!r} must start X and Y in different basins")


@dataclass
class ExperimentReport:
    name: str
    summary: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)
    batches: dict[str, BatchResult] = field(default_factory=dict)
    interrupted: bool = False

    def add_rows(self, table: str, rows: Any) -> None:
        self.tables.setdefault(table, []).extend(rows)


def _points(k: int, value: float) -> tuple[float, ...]:
    return tuple([value] * k)


def _case(label: str, spec: PotentialSpec, epsilons: tuple[float, ...], init: InitCondition, **kw: Any) -> LandscapeCase:
    return LandscapeCase(label=label, potential=spec, epsilons=epsilons, init=init, **kw)


def _quadratic_cases() -> tuple[LandscapeCase, ...]:
    return tuple(
        _case(
            f"lehmer_{k}",
            LehmerQuadratic(size=k),
            (0.02, 0.1, 0.5, 1.5),
            InitCondition(x0=_points(k, 1.0), y0=_points(k, -1.0)),
        )
        for k in (2, 4, 6, 8)
    )


def _ips_init() -> InitCondition:
    return InitCondition(x0=(1.0, 1.0, 1.0), y0=(-1.0, -1.0, -1.0))


def _rosenbrock_cases() -> tuple[LandscapeCase, ...]:
    r2, r4 = Rosenbrock(n=2), Rosenbrock(n=4)
    far = (-1.0, 1.0, 1.0, 1.0)
    cases = [
        _case("rosenbrock_2", r2, (0.001, 0.01, 0.1, 1.0, 1.5, 2.0), InitCondition(x0=(-1.0, 1.0), y0=(1.0, 1.0))),
        _case("rosenbrock_4", r4, (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0), InitCondition(x0=far, y0=_points(4, 1.0))),
    ]
    minima = reference_minima(r4)
    if len(minima.minima) > 1:
        local = tuple(float(v) for v in minima.minima[1].position)
        cases.append(_case("rosenbrock_4_pinned", r4, (0.001,), InitCondition(x0=local, y0=_points(4, 1.0))))
    else:
        logger.warning("no second Rosenbrock minimum found; pinned case dropped")
    return tuple(cases)


def _ann_cases() -> tuple[LandscapeCase, ...]:
    eps = tuple(round(float(e), 4) for e in np.linspace(0.5, 2.0, 10))
    box = InitCondition(x_box=(-1.0, 1.0), y_box=(-1.0, 1.0))
    return tuple(
        _case(f"ann_{n1}x{n2}", AnnLoss(n1=n1, n2=n2, seed=0, m=100), eps, box)
        for n1, n2 in ((4, 3), (10, 10), (20, 20))
    )


def default_plan(name: str, *, seed: int = 0, budget: SamplingBudget | None = None) -> ExperimentPlan:
    """Noise grids, starting laws and step sizes of the reference studies."""
    budget = budget or SamplingBudget()
    dw = DoubleWell1D()
    dw_points = InitCondition(x0=(DW_RIGHT,), y0=(DW_LEFT,))
    common: dict[str, Any] = {"seed": seed, "budget": budget}

    if name == "quadratic_tails":
        return ExperimentPlan(name="quadratic_tails", cases=_quadratic_cases(), **common)
    if name == "step_size":
        case = _case("lehmer_2", LehmerQuadratic(size=2), (1.0,), InitCondition(x0=(1.0, 1.0), y0=(-1.0, -1.0)))
        return ExperimentPlan(
            name="step_size",
            cases=(case,),
            steps=(0.0002, 0.0005, 0.001, 0.005, 0.01),
            **common,
        )
    if name == "double_well_barrier":
        case = _case("double_well", dw, (0.32, 0.36, 0.4, 0.45, 0.5, 0.6, 0.7), dw_points)
        return ExperimentPlan(name="double_well_barrier", cases=(case,), **common)
    if name == "h1_check":
        return ExperimentPlan(
            name="h1_check",
            cases=(
                _case("ips_0.05", InteractingParticles(sigma_int=0.05), (0.6, 0.65, 0.7, 0.75), _ips_init()),
                _case("double_well", dw, (0.4, 0.5, 0.6, 0.7), dw_points),
            ),
            **common,
        )
    if name == "h2_check":
        eps = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
        box = (0.1, 1.5)
        cases = [_case("uniform", dw, eps, InitCondition(x_box=box, y_box=box))]
        for x0 in (DW_BOUNDARY, 0.5, 1.2):
            cases.append(_case(f"x0={x0:g}", dw, eps, InitCondition(x0=(x0,), y_box=box)))
        return ExperimentPlan(name="h2_check", cases=tuple(cases), **common)
    if name == "h3_check":
        case = _case("ips_0.05", InteractingParticles(sigma_int=0.05), (0.5, 0.55, 0.6), _ips_init())
        return ExperimentPlan(name="h3_check", cases=(case,), **common)
    if name == "ips_barrier":
        return ExperimentPlan(
            name="ips_barrier",
            cases=(
                _case(
                    "ips_0.05",
                    InteractingParticles(sigma_int=0.05),
                    (0.4, 0.41, 0.42, 0.43, 0.45, 0.47, 0.5, 0.55, 0.6, 0.7),
                    _ips_init(),
                ),
                _case(
                    "ips_0.1",
                    InteractingParticles(sigma_int=0.1),
                    (0.41, 0.42, 0.43, 0.45, 0.47, 0.5, 0.55, 0.6, 0.7),
                    _ips_init(),
                ),
            ),
            **common,
        )
    if name == "rosenbrock_tails":
        return ExperimentPlan(name="rosenbrock_tails", cases=_rosenbrock_cases(), **common)
    if name == "ann_barrier":
        return ExperimentPlan(name="ann_barrier", cases=_ann_cases(), use_smallest=6, **common)
    raise InputError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENT_NAMES)}")


def case_from_dict(raw: dict[str, Any]) -> LandscapeCase:
    init_raw = raw.get("init", {})
    init = InitCondition(
        x0=tuple(init_raw["x0"]) if "x0" in init_raw else None,
        y0=tuple(init_raw["y0"]) if "y0" in init_raw else None,
        x_box=tuple(init_raw["x_box"]) if "x_box" in init_raw else None,
        y_box=tuple(init_raw["y_box"]) if "y_box" in init_raw else None,
    )
    return LandscapeCase(
        label=str(raw.get("label", "case")),
        potential=potential_from_dict(raw["potential"]),
        epsilons=tuple(float(e) for e in raw["epsilons"]),
        init=init,
        max_time=raw.get("max_time"),
    )
