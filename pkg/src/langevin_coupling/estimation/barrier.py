"""Noise sweeps and the zero-noise extrapolation of the tail rate.

For a multi-well landscape the rate behaves like C exp(-2 H / eps^2), so
-eps^2 log r(eps) is linear in eps^2 with intercept 2 H.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Literal, Sequence

import numpy as np
import scipy.stats

from ..coupling.batch import BatchResult, SamplingBudget, run_batch
from ..errors import DegenerateFitError, InputError, NoExponentialTailError, SweepError
from ..landscape.potentials import PotentialSpec
from ..protocol.types import InitCondition, InstrumentConfig, SimParams
from .tail import GridConfig, TailEstimate, estimate_rate

logger = logging.getLogger(__name__)

Verdict = Literal["single_well_convex_like", "multi_well", "inconclusive"]

DEFAULT_USE_SMALLEST = 6


@dataclass(frozen=True)
class SweepEntry:
    epsilon: float
    rate_r: float
    t_star: float
    sample_count: int
    censor_fraction: float
    estimate: TailEstimate | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "rate_r": self.rate_r,
            "t_star": self.t_star,
            "sample_count": self.sample_count,
            "censor_fraction": self.censor_fraction,
        }


@dataclass(frozen=True)
class SkippedEntry:
    epsilon: float
    reason: str


@dataclass(frozen=True)
class RateSweep:
    entries: tuple[SweepEntry, ...]
    potential: PotentialSpec | None = None
    skipped: tuple[SkippedEntry, ...] = ()
    interrupted: bool = False

    def __post_init__(self) -> None:
        eps = [e.epsilon for e in self.entries]
        if any(b <= a for a, b in zip(eps, eps[1:])):
            object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda e: e.epsilon)))
            eps = [e.epsilon for e in self.entries]
            if any(b <= a for a, b in zip(eps, eps[1:])):
                raise InputError(f"sweep epsilons must be distinct, got {eps}")
        if any(not e.rate_r > 0 for e in self.entries):
            raise InputError("sweep rates must all be > 0")

    @classmethod
    def from_rates(cls, epsilons: Sequence[float], rates: Sequence[float]) -> "RateSweep":
        if len(epsilons) != len(rates):
            raise InputError("epsilons and rates differ in length")
        return cls(
            entries=tuple(
                SweepEntry(epsilon=float(e), rate_r=float(r), t_star=0.0, sample_count=0, censor_fraction=0.0)
                for e, r in zip(epsilons, rates)
            )
        )

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([e.epsilon for e in self.entries])

    @property
    def rates(self) -> np.ndarray:
        return np.array([e.rate_r for e in self.entries])

    def to_dict(self) -> dict[str, Any]:
        return {
            "potential": self.potential.to_dict() if self.potential is not None else None,
            "entries": [e.to_dict() for e in self.entries],
            "skipped": [{"epsilon": s.epsilon, "reason": s.reason} for s in self.skipped],
            "interrupted": self.interrupted,
        }


@dataclass(frozen=True)
class BarrierEstimate:
    fit_intercept: float
    fit_slope: float
    intercept_stderr: float
    residuals: tuple[float, ...]
    epsilons_used: tuple[float, ...]

    @property
    def r0(self) -> float:
        """The zero-noise limit of -eps^2 log r(eps), equal to 2 H_U."""
        return self.fit_intercept

    @property
    def H_U(self) -> float:
        return self.fit_intercept / 2.0

    @property
    def barrier_detected(self) -> bool:
        return self.fit_intercept > 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "r0": self.r0,
            "H_U": self.H_U,
            "fit_intercept": self.fit_intercept,
            "fit_slope": self.fit_slope,
            "intercept_stderr": self.intercept_stderr,
            "residuals": list(self.residuals),
            "epsilons_used": list(self.epsilons_used),
            "barrier_detected": self.barrier_detected,
        }


def sweep_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for the index-th noise level."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0x5EED, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sweep(
    spec: PotentialSpec,
    epsilons: Sequence[float],
    per_eps: SamplingBudget,
    *,
    base: SimParams,
    init: InitCondition,
    grid: GridConfig = GridConfig(),
    instrument: InstrumentConfig = InstrumentConfig(),
    on_batch: Callable[[float, BatchResult], None] | None = None,
) -> RateSweep:
    """Batch and tail estimate per noise level; levels without an exponential tail are skipped.

    Too few uncensored samples at a level is a budget problem and raises InputError.
    """
    if len(epsilons) < 2:
        raise SweepError(f"a sweep needs at least 2 noise levels, got {len(epsilons)}")
    entries: list[SweepEntry] = []
    skipped: list[SkippedEntry] = []
    interrupted = False
    for idx, eps in enumerate(epsilons):
        params = SimParams(
            epsilon=float(eps),
            step=base.step,
            threshold_factor=base.threshold_factor,
            max_time=base.max_time,
            seed=sweep_seed(base.seed, idx),
            divergence_radius=base.divergence_radius,
        )
        batch = run_batch(
            spec, params, init, instrument, per_eps.samples, per_eps.workers, block_size=per_eps.block_size
        )
        if on_batch is not None:
            on_batch(float(eps), batch)
        if batch.interrupted:
            interrupted = True
            skipped.append(SkippedEntry(float(eps), "interrupted"))
            break
        try:
            est = estimate_rate(batch.records, grid)
        except (NoExponentialTailError, DegenerateFitError) as exc:
            logger.warning("eps=%g skipped: %s", eps, exc)
            skipped.append(SkippedEntry(float(eps), str(exc)))
            continue
        logger.info("eps=%g rate=%.6g t*=%.4g censored=%.3f", eps, est.rate_r, est.t_star, est.censored_fraction)
        entries.append(
            SweepEntry(
                epsilon=float(eps),
                rate_r=est.rate_r,
                t_star=est.t_star,
                sample_count=len(batch.records),
                censor_fraction=est.censored_fraction,
                estimate=est,
            )
        )
    if len(entries) < 2 and not interrupted:
        raise SweepError(f"only {len(entries)} noise level(s) produced a tail estimate; need at least 2")
    return RateSweep(entries=tuple(entries), potential=spec, skipped=tuple(skipped), interrupted=interrupted)


def extrapolate(sweep: RateSweep, use_smallest: int | None = None) -> BarrierEstimate:
    """Least squares of -eps^2 log r against eps^2 over the smallest noise levels."""
    available = len(sweep.entries)
    if available < 2:
        raise SweepError(f"extrapolation needs at least 2 usable entries, got {available}")
    if use_smallest is None:
        use_smallest = min(DEFAULT_USE_SMALLEST, available)
    if use_smallest < 2 or use_smallest > available:
        raise InputError(f"use_smallest must be in [2, {available}], got {use_smallest}")
    entries = sorted(sweep.entries, key=lambda e: e.epsilon)[:use_smallest]
    eps = np.array([e.epsilon for e in entries])
    x = eps**2
    y = -(eps**2) * np.log([e.rate_r for e in entries])
    if use_smallest == 2:
        slope = float((y[1] - y[0]) / (x[1] - x[0]))
        intercept = float(y[0] - slope * x[0])
        stderr = float("nan")
    else:
        fit = scipy.stats.linregress(x, y)
        slope, intercept, stderr = float(fit.slope), float(fit.intercept), float(fit.intercept_stderr)
    residuals = tuple(float(v) for v in y - (slope * x + intercept))
    if intercept <= 0:
        logger.info("extrapolated intercept %.6g <= 0: no barrier detected", intercept)
    return BarrierEstimate(
        fit_intercept=intercept,
        fit_slope=slope,
        intercept_stderr=stderr,
        residuals=residuals,
        epsilons_used=tuple(float(e) for e in eps),
    )


def classify(sweep: RateSweep, flatness_tol: float = 0.25) -> Verdict:
    entries = sorted(sweep.entries, key=lambda e: e.epsilon)
    if len(entries) < 3:
        return "inconclusive"
    rates = np.array([e.rate_r for e in entries])
    if rates.max() / rates.min() < 1.0 + flatness_tol:
        return "single_well_convex_like"
    est = extrapolate(RateSweep(entries=tuple(entries)), use_smallest=len(entries))
    increasing = bool(np.all(np.diff(rates) > 0))
    if increasing and est.fit_intercept > 3.0 * est.intercept_stderr and est.fit_intercept > 0:
        return "multi_well"
    return "inconclusive"


def extrapolation_rows(sweep: RateSweep, estimate: BarrierEstimate) -> Iterable[dict[str, Any]]:
    used = set(estimate.epsilons_used)
    for e in sorted(sweep.entries, key=lambda e: e.epsilon):
        x = e.epsilon**2
        yield {
            "epsilon": e.epsilon,
            "eps2": x,
            "neg_eps2_log_r": -x * math.log(e.rate_r),
            "line": estimate.fit_slope * x + estimate.fit_intercept,
            "used": e.epsilon in used,
        }
    yield {
        "epsilon": 0.0,
        "eps2": 0.0,
        "neg_eps2_log_r": float("nan"),
        "line": estimate.fit_intercept,
        "used": False,
    }
