from __future__ import annotations

import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, TypeVar

import numpy as np

from ..errors import InputError
from ..landscape.potentials import PotentialSpec
from ..protocol.types import CouplingRecord, InitCondition, InstrumentConfig, SampleFailure, SimParams
from ..runtime.tick import Ticker
from .engine import first_passage_block, simulate_block

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 256

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class SamplingBudget:
    samples: int = 100_000
    workers: int = 1
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self) -> None:
        if self.samples < 0:
            raise InputError(f"samples must be >= 0, got {self.samples}")
        if self.workers < 1:
            raise InputError(f"workers must be >= 1, got {self.workers}")
        if self.block_size < 1:
            raise InputError(f"block_size must be >= 1, got {self.block_size}")

    def to_dict(self) -> dict[str, Any]:
        return {"samples": self.samples, "workers": self.workers, "block_size": self.block_size}


@dataclass
class BatchResult:
    records: list[CouplingRecord]
    failures: list[SampleFailure] = field(default_factory=list)
    requested: int = 0
    interrupted: bool = False

    @property
    def censored_count(self) -> int:
        return sum(r.censored for r in self.records)

    @property
    def censored_fraction(self) -> float:
        return self.censored_count / len(self.records) if self.records else 0.0

    def summary(self) -> dict[str, Any]:
        return {
            "requested": self.requested,
            "completed": len(self.records),
            "failed": len(self.failures),
            "censored": self.censored_count,
            "censored_fraction": self.censored_fraction,
            "interrupted": self.interrupted,
        }


@dataclass
class FirstPassageBatch:
    tau_hh: np.ndarray
    tau_hh1: np.ndarray
    censored: np.ndarray
    interrupted: bool = False

    @property
    def differences(self) -> np.ndarray:
        ok = ~self.censored
        return self.tau_hh[ok] - self.tau_hh1[ok]


def block_plan(n_samples: int, block_size: int) -> list[tuple[int, int]]:
    """(block index, row count) for every block of a batch."""
    blocks = math.ceil(n_samples / block_size)
    return [(b, min(block_size, n_samples - b * block_size)) for b in range(blocks)]


@dataclass(frozen=True)
class _CouplingJob:
    spec: PotentialSpec
    params: SimParams
    init: InitCondition
    instrument: InstrumentConfig
    block_index: int
    block_size: int
    count: int


def _run_coupling_job(job: _CouplingJob) -> tuple[list[CouplingRecord], list[SampleFailure]]:
    return simulate_block(
        job.spec, job.params, job.init, job.instrument, job.block_index, job.block_size, job.count
    )


@dataclass(frozen=True)
class _PassageJob:
    spec: PotentialSpec
    params: SimParams
    init: InitCondition
    h1: float
    block_index: int
    block_size: int
    count: int


def _run_passage_job(job: _PassageJob) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return first_passage_block(job.spec, job.params, job.init, job.h1, job.block_index, job.block_size, job.count)


def _ordered_map(fn: Callable[[T], R], jobs: list[T], workers: int) -> Iterator[R]:
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            yield fn(job)
        return
    with multiprocessing.Pool(processes=min(workers, len(jobs))) as pool:
        yield from pool.imap(fn, jobs)


def _drain(results: Iterable[R], total: int, label: str, hz: float) -> tuple[list[R], bool]:
    ticker = Ticker(hz)
    out: list[R] = []
    try:
        for res in results:
            out.append(res)
            if ticker.ready():
                logger.info("%s: %d/%d blocks", label, len(out), total)
    except KeyboardInterrupt:
        logger.warning("%s interrupted after %d/%d blocks; keeping completed blocks", label, len(out), total)
        return out, True
    return out, False


def run_batch(
    spec: PotentialSpec,
    params: SimParams,
    init: InitCondition,
    instrument: InstrumentConfig = InstrumentConfig(),
    n_samples: int = 1,
    workers: int = 1,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    progress_hz: float = 1.0,
) -> BatchResult:
    """Simulate ``n_samples`` pairs; results are in sample order and do not depend on ``workers``."""
    if n_samples < 0:
        raise InputError(f"n_samples must be >= 0, got {n_samples}")
    if workers < 1:
        raise InputError(f"workers must be >= 1, got {workers}")
    if block_size < 1:
        raise InputError(f"block_size must be >= 1, got {block_size}")
    plan = block_plan(n_samples, block_size)
    jobs = [_CouplingJob(spec, params, init, instrument, b, block_size, c) for b, c in plan]
    logger.debug("batch: %d samples in %d blocks on %d workers", n_samples, len(jobs), workers)

    done, interrupted = _drain(_ordered_map(_run_coupling_job, jobs, workers), len(jobs), "batch", progress_hz)
    records = [r for recs, _ in done for r in recs]
    failures = [f for _, fails in done for f in fails]
    if failures:
        logger.warning("%d of %d samples diverged and were skipped", len(failures), n_samples)
    return BatchResult(records=records, failures=failures, requested=n_samples, interrupted=interrupted)


def run_first_passage(
    spec: PotentialSpec,
    params: SimParams,
    init: InitCondition,
    h1: float,
    n_samples: int,
    workers: int = 1,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    progress_hz: float = 1.0,
) -> FirstPassageBatch:
    if n_samples < 1:
        raise InputError(f"n_samples must be >= 1, got {n_samples}")
    plan = block_plan(n_samples, block_size)
    jobs = [_PassageJob(spec, params, init, h1, b, block_size, c) for b, c in plan]
    done, interrupted = _drain(_ordered_map(_run_passage_job, jobs, workers), len(jobs), "first passage", progress_hz)
    if not done:
        empty = np.empty(0)
        return FirstPassageBatch(empty, empty, np.empty(0, dtype=bool), interrupted=True)
    return FirstPassageBatch(
        tau_hh=np.concatenate([d[0] for d in done]),
        tau_hh1=np.concatenate([d[1] for d in done]),
        censored=np.concatenate([d[2] for d in done]),
        interrupted=interrupted,
    )
