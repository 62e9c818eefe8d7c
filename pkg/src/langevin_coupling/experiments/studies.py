from __future__ import annotations

import logging
import math
from typing import Any, Callable

import numpy as np
import scipy.stats

from ..coupling.batch import BatchResult, run_batch, run_first_passage
from ..errors import DegenerateFitError, InputError, NoExponentialTailError, SweepError
from ..estimation.barrier import (
    BarrierEstimate,
    RateSweep,
    classify,
    extrapolate,
    extrapolation_rows,
    sweep,
    sweep_seed,
)
from ..estimation.tail import estimate_rate, survival_rows
from ..landscape.basins import reference_minima
from ..landscape.potentials import DoubleWell1D, InteractingParticles, LehmerQuadratic, least_eigenvalue
from ..landscape.string import StringPath, essential_barrier_along_path, string_method
from .checks import run_h1_check, run_h2_check, run_h3_check
from .plans import ExperimentPlan, ExperimentReport, LandscapeCase

logger = logging.getLogger(__name__)

# case seeds live far from the per-level indices used inside a sweep
_CASE_SEED_OFFSET = 10_000


def ips_string(spec: InteractingParticles, images: int = 64, iters: int = 50_000) -> StringPath:
    """String from the global minimum to the minimum near (1, ..., 1), flipping one particle at a time."""
    minima = reference_minima(spec)
    positions = minima.positions()
    n = spec.dimension

    def nearest(corner: np.ndarray) -> np.ndarray:
        return positions[int(np.argmin(np.linalg.norm(positions - corner, axis=1)))]

    start = positions[0]
    end = nearest(np.ones(n))
    waypoints = [nearest(np.concatenate([-np.ones(n - j), np.ones(j)])) for j in range(1, n)]
    return string_method(spec, start, end, images=images, iters=iters, waypoints=waypoints)


def _record_batch(report: ExperimentReport, case: LandscapeCase) -> Callable[[float, BatchResult], None]:
    def store(eps: float, batch: BatchResult) -> None:
        report.batches[f"{case.label}_eps{eps:g}"] = batch
        if batch.interrupted:
            report.interrupted = True

    return store


def _tail_case(plan: ExperimentPlan, report: ExperimentReport, case: LandscapeCase, ci: int) -> dict[str, Any]:
    """Rates per noise level for one case, plus the extrapolation and verdict when there are enough levels."""
    base = plan.params(case.epsilons[0], sweep_seed(plan.seed, _CASE_SEED_OFFSET + ci), case)
    out: dict[str, Any] = {"label": case.label, "potential": case.potential.to_dict()}
    store = _record_batch(report, case)

    if len(case.epsilons) < 2:
        eps = case.epsilons[0]
        batch = run_batch(
            case.potential, base, case.init, n_samples=plan.budget.samples,
            workers=plan.budget.workers, block_size=plan.budget.block_size,
        )
        store(eps, batch)
        try:
            est = estimate_rate(batch.records, plan.grid)
        except (NoExponentialTailError, DegenerateFitError, InputError) as exc:
            out["error"] = str(exc)
            return out
        report.add_rows(
            "rates",
            [{"case": case.label, "epsilon": eps, "rate_r": est.rate_r, "t_star": est.t_star,
              "sample_count": len(batch.records), "censor_fraction": est.censored_fraction}],
        )
        report.add_rows("survival", [dict(r, case=case.label) for r in survival_rows(eps, est)])
        out["rates"] = {str(eps): est.rate_r}
        return out

    try:
        sw = sweep(
            case.potential, case.epsilons, plan.budget,
            base=base, init=case.init, grid=plan.grid, on_batch=store,
        )
    except (SweepError, InputError) as exc:
        out["error"] = str(exc)
        return out
    out.update(_sweep_summary(plan, report, case, sw))
    return out


def _sweep_summary(plan: ExperimentPlan, report: ExperimentReport, case: LandscapeCase, sw: RateSweep) -> dict[str, Any]:
    out: dict[str, Any] = {
        "rates": {str(e.epsilon): e.rate_r for e in sw.entries},
        "skipped": [{"epsilon": s.epsilon, "reason": s.reason} for s in sw.skipped],
        "sample_counts": {str(e.epsilon): e.sample_count for e in sw.entries},
        "censor_fractions": {str(e.epsilon): e.censor_fraction for e in sw.entries},
    }
    report.add_rows("rates", [dict(e.to_dict(), case=case.label) for e in sw.entries])
    for e in sw.entries:
        if e.estimate is not None:
            report.add_rows("survival", [dict(r, case=case.label) for r in survival_rows(e.epsilon, e.estimate)])
    out["verdict"] = classify(sw, plan.flatness_tol)
    if len(sw.entries) >= 2:
        use = plan.use_smallest
        if use is not None:
            use = min(use, len(sw.entries))
        est: BarrierEstimate = extrapolate(sw, use)
        out["barrier"] = est.to_dict()
        report.add_rows("extrapolation", [dict(r, case=case.label) for r in extrapolation_rows(sw, est)])
    return out


def _run_cases(plan: ExperimentPlan, report: ExperimentReport) -> list[dict[str, Any]]:
    results = []
    for ci, case in enumerate(plan.cases):
        results.append(_tail_case(plan, report, case, ci))
        if report.interrupted:
            break
    return results


def run_quadratic_tails(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    results = _run_cases(plan, report)
    for case, res in zip(plan.cases, results):
        if isinstance(case.potential, LehmerQuadratic):
            lam = least_eigenvalue(case.potential.matrix)
            res["lambda_min"] = lam
            res["relative_errors"] = {eps: abs(r - lam) / lam for eps, r in res.get("rates", {}).items()}
    report.summary = {"cases": results}
    return report


def run_double_well_barrier(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    results = _run_cases(plan, report)
    for case, res in zip(plan.cases, results):
        if isinstance(case.potential, DoubleWell1D):
            crit = reference_minima(case.potential)
            saddle = crit.saddles[0].value
            res["reference_H_U"] = max(saddle - m.value for m in crit.minima[1:])
    report.summary = {"cases": results}
    return report


def run_ips_barrier(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    results = _run_cases(plan, report)
    for case, res in zip(plan.cases, results):
        if isinstance(case.potential, InteractingParticles):
            path = ips_string(case.potential)
            res["reference_H_U"] = essential_barrier_along_path(path)
            res["string_converged"] = path.converged
            report.add_rows("string_" + case.label, path.rows())
    report.summary = {"cases": results}
    return report


def run_rosenbrock_tails(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    results = _run_cases(plan, report)
    report.summary = {
        "cases": results,
        "multi_well_detected": any(r.get("verdict") == "multi_well" for r in results),
    }
    return report


def run_ann_barrier(plan: ExperimentPlan) -> ExperimentReport:
    report = ExperimentReport(name=plan.name)
    results = _run_cases(plan, report)
    intercepts = [r.get("barrier", {}).get("fit_intercept") for r in results]
    ordered = None
    if intercepts and all(v is not None for v in intercepts):
        ordered = all(a > b for a, b in zip(intercepts, intercepts[1:]))
    report.summary = {"cases": results, "intercepts": intercepts, "decreasing_with_size": ordered}
    return report


def run_step_size_study(plan: ExperimentPlan) -> ExperimentReport:
    """Bias of the discretely sampled first passage time against sqrt(h)."""
    report = ExperimentReport(name=plan.name)
    case = plan.cases[0]
    eps = case.epsilons[0]
    per_h: list[dict[str, Any]] = []
    for hi, h in enumerate(plan.steps):
        roots: list[float] = []
        means: list[float] = []
        for ni, n in enumerate(plan.fine_divisors):
            h1 = h / n
            params = plan.params(eps, sweep_seed(plan.seed, 100 * hi + ni), case, step=h)
            batch = run_first_passage(
                case.potential, params, case.init, h1, plan.budget.samples,
                plan.budget.workers, block_size=plan.budget.block_size,
            )
            if batch.interrupted:
                report.interrupted = True
            diffs = batch.differences
            if diffs.size == 0:
                continue
            mean = float(diffs.mean())
            roots.append(math.sqrt(h1))
            means.append(mean)
            report.add_rows(
                "first_passage",
                [{
                    "h": h, "h1": h1, "sqrt_h1": math.sqrt(h1), "mean_difference": mean,
                    "stderr": float(diffs.std(ddof=1) / math.sqrt(diffs.size)) if diffs.size > 1 else None,
                    "samples": int(diffs.size), "censored": int(batch.censored.sum()),
                }],
            )
            if report.interrupted:
                break
        if len(roots) >= 2:
            fit = scipy.stats.linregress(roots, means)
            per_h.append({"h": h, "sqrt_h": math.sqrt(h), "bias": float(fit.intercept), "r_squared": float(fit.rvalue**2)})
        if report.interrupted:
            break
    report.add_rows("bias", per_h)
    summary: dict[str, Any] = {"epsilon": eps, "per_step": per_h}
    if len(per_h) >= 2:
        fit = scipy.stats.linregress([r["sqrt_h"] for r in per_h], [r["bias"] for r in per_h])
        summary.update({"slope": float(fit.slope), "intercept": float(fit.intercept), "r_squared": float(fit.rvalue**2)})
    report.summary = summary
    return report


RUNNERS: dict[str, Callable[[ExperimentPlan], ExperimentReport]] = {
    "quadratic_tails": run_quadratic_tails,
    "step_size": run_step_size_study,
    "double_well_barrier": run_double_well_barrier,
    "h1_check": run_h1_check,
    "h2_check": run_h2_check,
    "h3_check": run_h3_check,
    "ips_barrier": run_ips_barrier,
    "rosenbrock_tails": run_rosenbrock_tails,
    "ann_barrier": run_ann_barrier,
}


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    logger.info("experiment %s: %d case(s), %d samples per level", plan.name, len(plan.cases), plan.budget.samples)
    report = RUNNERS[plan.name](plan)
    report.summary.setdefault("seed", plan.seed)
    return report
