"""Monte Carlo checks of the three working hypotheses behind the barrier estimate.

* confinement: Y, started in the global basin, stays there while X has not
  yet arrived;
* local coupling: pairs started in one basin couple before leaving it with a
  probability bounded away from zero, and both conditional tails keep their
  slope as the noise shrinks;
* overshoot: once both trajectories have visited the global basin, the wait
  until they are there together has a steeper tail than the coupling time.
"""
from __future__ import annotations

import logging
from typing import Any, Sequence

import numpy as np

from ..coupling.batch import BatchResult, run_batch
from ..errors import DegenerateFitError, InputError, NoExponentialTailError
from ..estimation.barrier import sweep_seed
from ..estimation.tail import GridConfig, TailEstimate, estimate_rate, estimate_rate_from_times
from ..protocol.types import CouplingRecord, InstrumentConfig
from .plans import ExperimentPlan, ExperimentReport, LandscapeCase

logger = logging.getLogger(__name__)


def _try_rate(times: Sequence[float], censored: Sequence[bool] | None, grid: GridConfig) -> tuple[TailEstimate | None, str | None]:
    try:
        return estimate_rate_from_times(np.asarray(times, dtype=float), censored, grid), None
    except (NoExponentialTailError, DegenerateFitError, InputError) as exc:
        return None, str(exc)


def _batch(
    plan: ExperimentPlan,
    case: LandscapeCase,
    index: int,
    epsilon: float,
    instrument: InstrumentConfig,
    report: ExperimentReport,
) -> BatchResult:
    params = plan.params(epsilon, sweep_seed(plan.seed, index), case)
    budget = plan.budget
    batch = run_batch(
        case.potential, params, case.init, instrument, budget.samples, budget.workers, block_size=budget.block_size
    )
    report.batches[f"{case.label}_eps{epsilon:g}"] = batch
    if batch.interrupted:
        report.interrupted = True
    return batch


def _inf(v: float | None) -> float:
    return float("inf") if v is None else v


def confinement_frequency(records: Sequence[CouplingRecord], t: float) -> tuple[float | None, int]:
    """P[Y has stayed in the global basin on [0, t] | X has not entered it by t], with the conditioning count."""
    cond = 0
    stayed = 0
    for r in records:
        end = r.tau_c
        entered = _inf(r.kappa_x)
        if entered <= t or (r.kappa_x is None and end < t):
            continue
        cond += 1
        if _inf(r.exit_y) > t:
            stayed += 1
    return (stayed / cond if cond else None), cond


def run_h1_check(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    instrument = InstrumentConfig(basins=True)
    index = 0
    cases: dict[str, Any] = {}
    for case in plan.cases:
        per_eps: list[dict[str, Any]] = []
        for eps in case.epsilons:
            batch = _batch(plan, case, index, eps, instrument, report)
            index += 1
            records = batch.records
            if plan.times:
                times = np.asarray(plan.times, dtype=float)
            else:
                entered = np.array([r.kappa_x for r in records if r.kappa_x is not None and r.kappa_x > 0])
                times = np.quantile(entered, np.linspace(0.0, 0.9, 10)) if entered.size else np.array([plan.step])
            worst: float | None = None
            for t in times:
                freq, cond = confinement_frequency(records, float(t))
                report.add_rows(
                    "confinement",
                    [{"case": case.label, "epsilon": eps, "t": float(t), "frequency": freq, "conditioned": cond}],
                )
                if freq is not None:
                    worst = freq if worst is None else min(worst, freq)
            y_first = sum(_inf(r.exit_y) < _inf(r.kappa_x) for r in records)
            per_eps.append(
                {
                    "epsilon": eps,
                    "min_frequency": worst,
                    "y_left_first": int(y_first),
                    **batch.summary(),
                }
            )
            logger.info("h1 %s eps=%g: min frequency %s, Y left first in %d samples", case.label, eps, worst, y_first)
            if report.interrupted:
                break
        cases[case.label] = per_eps
        if report.interrupted:
            break
    report.summary = {"cases": cases}
    return report


def run_h2_check(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    instrument = InstrumentConfig(basins=True, stop_on_exit=True)
    index = 0
    cases: dict[str, Any] = {}
    for case in plan.cases:
        per_eps: list[dict[str, Any]] = []
        for eps in case.epsilons:
            batch = _batch(plan, case, index, eps, instrument, report)
            index += 1
            records = batch.records
            coupled = [r.tau_c for r in records if r.coupled_before_exit]
            exited = [r.exit_time for r in records if not r.coupled_before_exit and r.exit_time is not None]
            undecided = len(records) - len(coupled) - len(exited)
            decided = len(coupled) + len(exited)
            p_coupled = len(coupled) / decided if decided else None
            coupled_fit, coupled_why = _try_rate(coupled, None, plan.grid)
            exit_fit, exit_why = _try_rate(exited, None, plan.grid)
            row = {
                "case": case.label,
                "epsilon": eps,
                "p_coupled": p_coupled,
                "coupled": len(coupled),
                "exited": len(exited),
                "undecided": undecided,
                "coupled_rate": coupled_fit.rate_r if coupled_fit else None,
                "coupled_rate_note": coupled_why,
                "exit_rate": exit_fit.rate_r if exit_fit else None,
                "exit_rate_note": exit_why,
                "samples": len(records),
                "censored_fraction": batch.censored_fraction,
            }
            report.add_rows("local_coupling", [row])
            per_eps.append(row)
            logger.info("h2 %s eps=%g: P[coupled first]=%s", case.label, eps, p_coupled)
            if report.interrupted:
                break
        cases[case.label] = {"entries": per_eps, **_spread(per_eps)}
        if report.interrupted:
            break
    report.summary = {"cases": cases}
    return report


def _spread(rows: Sequence[dict[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key in ("coupled_rate", "exit_rate"):
        vals = [r[key] for r in rows if r[key] is not None]
        out[f"{key}_spread"] = (max(vals) / min(vals) - 1.0) if len(vals) >= 2 and min(vals) > 0 else None
    probs = [r["p_coupled"] for r in rows if r["p_coupled"] is not None]
    out["min_p_coupled"] = min(probs) if probs else None
    return out


def run_h3_check(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    instrument = InstrumentConfig(basins=True, run_until_xi1=True)
    index = 0
    cases: dict[str, Any] = {}
    for case in plan.cases:
        per_eps: list[dict[str, Any]] = []
        for eps in case.epsilons:
            batch = _batch(plan, case, index, eps, instrument, report)
            index += 1
            records = batch.records
            overshoot = [r.overshoot for r in records if r.overshoot is not None]
            try:
                coupling_fit: TailEstimate | None = estimate_rate(records, plan.grid)
                coupling_why = None
            except (NoExponentialTailError, DegenerateFitError, InputError) as exc:
                coupling_fit, coupling_why = None, str(exc)
            over_fit, over_why = _try_rate(overshoot, None, plan.grid)
            steeper = (
                over_fit.rate_r > coupling_fit.rate_r if over_fit is not None and coupling_fit is not None else None
            )
            row = {
                "case": case.label,
                "epsilon": eps,
                "overshoot_rate": over_fit.rate_r if over_fit else None,
                "overshoot_note": over_why,
                "overshoot_t_star": over_fit.t_star if over_fit else None,
                "coupling_rate": coupling_fit.rate_r if coupling_fit else None,
                "coupling_note": coupling_why,
                "steeper": steeper,
                "overshoot_median": float(np.median(overshoot)) if overshoot else None,
                "coupling_median": float(np.median([r.tau_c for r in records])) if records else None,
                "overshoot_samples": len(overshoot),
                "samples": len(records),
                "censored_fraction": batch.censored_fraction,
            }
            report.add_rows("overshoot", [row])
            per_eps.append(row)
            logger.info("h3 %s eps=%g: overshoot steeper=%s", case.label, eps, steeper)
            if report.interrupted:
                break
        cases[case.label] = {
            "entries": per_eps,
            "all_steeper": all(r["steeper"] is True for r in per_eps) if per_eps else None,
        }
        if report.interrupted:
            break
    report.summary = {"cases": cases}
    return report
