"""Command implementations behind the CLI.

Every command writes one run directory under ``config.out``. A Ctrl-C while a
batch is running keeps the finished blocks, writes them, and marks the manifest
``partial``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..config import RunConfig
from ..coupling.batch import BatchResult, run_batch
from ..errors import ConfigError, InputError, SweepError
from ..estimation.barrier import classify, extrapolate, extrapolation_rows, sweep, sweep_seed
from ..estimation.tail import bootstrap_rate_error, estimate_rate, survival_rows
from ..experiments.studies import ips_string, run_experiment
from ..landscape.basins import reference_minima
from ..landscape.grid import build_grid, essential_barrier_height_forms, essential_barrier_height_grid
from ..landscape.potentials import InteractingParticles
from ..landscape.string import barriers_along_path, essential_barrier_along_path, string_method
from ..storage.session import RunDirectory, read_records

logger = logging.getLogger(__name__)


@dataclass
class CommandResult:
    run_dir: Path
    partial: bool = False
    summary: dict[str, Any] = field(default_factory=dict)


class _Command:
    """Owns the run directory of one command and writes its manifest on the way out."""

    def __init__(self, cfg: RunConfig, command: str) -> None:
        self.cfg = cfg
        self.command = command
        self.run = RunDirectory.create(cfg.out, command)
        self.partial = False
        self.extra: dict[str, Any] = {}
        self.summary: dict[str, Any] = {}

    def __enter__(self) -> "_Command":
        logger.info("%s: writing to %s", self.command, self.run.run_dir)
        return self

    def __exit__(self, exc_type: Any, exc: Any, tb: Any) -> bool:
        swallow = exc_type is KeyboardInterrupt
        if swallow:
            logger.warning("%s interrupted; writing partial results", self.command)
            self.partial = True
        try:
            self.run.write_manifest(
                command=self.command,
                config=self.cfg.to_dict(),
                seed=self.cfg.seed,
                workers=self.cfg.workers,
                partial=self.partial,
                extra=self.extra,
            )
        finally:
            self.run.close()
        return swallow

    def batch_done(self, name: str, batch: BatchResult, **info: Any) -> None:
        self.run.write_samples(name, batch.records)
        if batch.failures:
            self.run.write_table(
                name.replace(".csv", "_failures.csv"),
                [{"sample_index": f.sample_index, "reason": f.reason} for f in batch.failures],
            )
        if batch.interrupted:
            self.partial = True
        self.run.write_summary({"event": "batch", "file": name, **info, **batch.summary()})

    def result(self) -> CommandResult:
        return CommandResult(run_dir=self.run.run_dir, partial=self.partial, summary=self.summary)


def _samples_name(epsilon: float) -> str:
    return f"samples_eps{epsilon:g}.csv"


def cmd_sample(cfg: RunConfig) -> CommandResult:
    spec = cfg.require_potential()
    init = cfg.require_init()
    if not cfg.epsilons:
        raise ConfigError("sample needs at least one epsilon", key="epsilons")
    with _Command(cfg, "sample") as cmd:
        for idx, eps in enumerate(cfg.epsilons):
            params = cfg.sim_params(eps, seed=sweep_seed(cfg.seed, idx))
            batch = run_batch(
                spec, params, init, cfg.instrument, cfg.budget, cfg.workers,
                block_size=cfg.block_size, progress_hz=cfg.progress_hz,
            )
            name = _samples_name(eps)
            cmd.batch_done(name, batch, epsilon=eps, params=params.to_dict())
            cmd.summary[name] = batch.summary()
            if batch.interrupted:
                break
    return cmd.result()


def cmd_estimate(cfg: RunConfig, paths: Sequence[str | Path], bootstrap: int = 0) -> CommandResult:
    if not paths:
        raise ConfigError("estimate needs at least one sample file", key="paths")
    grid = cfg.grid_config
    with _Command(cfg, "estimate") as cmd:
        cmd.extra["inputs"] = [str(p) for p in paths]
        for p in paths:
            records = read_records(p)
            est = estimate_rate(records, grid)
            payload: dict[str, Any] = {"input": str(p), "grid": grid.to_dict(), **est.to_dict()}
            if bootstrap > 0:
                observed = sum(not r.censored for r in records)
                payload["rate_stderr"] = bootstrap_rate_error(est.rate_r, observed, grid, bootstrap, cfg.seed)
            stem = Path(p).stem
            cmd.run.write_estimate(f"estimate_{stem}.json", payload)
            cmd.run.write_table(f"survival_{stem}.csv", survival_rows(math.nan, est))
            cmd.run.write_summary({"event": "estimate", "input": str(p), "rate_r": est.rate_r, "t_star": est.t_star})
            cmd.summary[stem] = {"rate_r": est.rate_r, "t_star": est.t_star, "censored_fraction": est.censored_fraction}
    return cmd.result()


def cmd_sweep(cfg: RunConfig) -> CommandResult:
    spec = cfg.require_potential()
    init = cfg.require_init()
    if len(cfg.epsilons) < 2:
        raise ConfigError("sweep needs at least two epsilons", key="epsilons")
    with _Command(cfg, "sweep") as cmd:

        def on_batch(eps: float, batch: BatchResult) -> None:
            cmd.batch_done(_samples_name(eps), batch, epsilon=eps)

        sw = sweep(
            spec, cfg.epsilons, cfg.sampling_budget(),
            base=cfg.sim_params(cfg.epsilons[0]), init=init, grid=cfg.grid_config,
            instrument=cfg.instrument, on_batch=on_batch,
        )
        if sw.interrupted:
            cmd.partial = True
        cmd.run.write_table("rates.csv", [e.to_dict() for e in sw.entries])
        cmd.run.write_table(
            "survival.csv",
            [row for e in sw.entries if e.estimate is not None for row in survival_rows(e.epsilon, e.estimate)],
        )
        payload: dict[str, Any] = {"sweep": sw.to_dict(), "verdict": classify(sw, cfg.flatness_tol)}
        if len(sw.entries) >= 2:
            est = extrapolate(sw, cfg.use_smallest)
            payload["barrier"] = est.to_dict()
            cmd.run.write_table("extrapolation.csv", extrapolation_rows(sw, est))
            logger.info("intercept %.6g (H_U %.6g), verdict %s", est.fit_intercept, est.H_U, payload["verdict"])
        elif not sw.interrupted:
            raise SweepError("fewer than two usable noise levels")
        cmd.run.write_estimate("barrier.json", payload)
        cmd.summary = payload
    return cmd.result()


def _string_report(cfg: RunConfig, cmd: _Command) -> dict[str, Any]:
    spec = cfg.require_potential()
    oc = cfg.oracle
    if oc.start is None and oc.end is None and isinstance(spec, InteractingParticles):
        path = ips_string(spec, images=oc.images, iters=oc.iters)
    else:
        start, end = oc.start, oc.end
        if start is None or end is None:
            minima = reference_minima(spec).minima
            if len(minima) < 2:
                raise InputError("string oracle needs two minima or explicit start/end points")
            start = minima[0].position if start is None else start
            end = minima[-1].position if end is None else end
        path = string_method(
            spec, start, end, images=oc.images, step=oc.step, iters=oc.iters, tol=oc.tol, waypoints=oc.waypoints
        )
    cmd.run.write_table("string_path.csv", path.rows())
    barriers = barriers_along_path(path)
    return {
        "converged": path.converged,
        "iterations": path.iterations,
        "barriers": [
            {"ascent": b.ascent, "descent": b.descent, "peak": b.peak.tolist(), "peak_energy": b.peak_energy,
             "arclength": b.arclength}
            for b in barriers
        ],
        "H_U": essential_barrier_along_path(path),
    }


def _grid_report(cfg: RunConfig) -> dict[str, Any]:
    spec = cfg.require_potential()
    oc = cfg.oracle
    if not oc.bounds:
        raise ConfigError("grid oracle needs oracle.bounds", key="oracle.bounds")
    minima = reference_minima(spec)
    grid = build_grid(spec, oc.bounds, oc.resolution, oc.diagonal)
    to_global, to_lower = essential_barrier_height_forms(grid, minima)
    out = {"to_global": to_global, "to_lower": to_lower, "nodes": grid.size, "resolution": oc.resolution}
    out["H_U"] = essential_barrier_height_grid(grid, minima)
    return out


def cmd_oracle(cfg: RunConfig) -> CommandResult:
    spec = cfg.require_potential()
    with _Command(cfg, "oracle") as cmd:
        report: dict[str, Any] = {"potential": spec.to_dict()}
        try:
            report["minima"] = reference_minima(spec).to_dict()
        except InputError as exc:
            report["minima"] = None
            logger.info("no reference minima: %s", exc)
        if cfg.oracle.method in ("grid", "both"):
            report["grid"] = _grid_report(cfg)
            cmd.run.write_summary({"event": "grid", **report["grid"]})
        if cfg.oracle.method in ("string", "both"):
            report["string"] = _string_report(cfg, cmd)
            cmd.run.write_summary({"event": "string", "H_U": report["string"]["H_U"]})
        cmd.run.write_estimate("oracle.json", report)
        cmd.summary = report
    return cmd.result()


def cmd_experiment(cfg: RunConfig, name: str | None = None) -> CommandResult:
    plan = cfg.plan(name)
    with _Command(cfg, plan.name) as cmd:
        cmd.extra["plan"] = plan.to_dict()
        report = run_experiment(plan)
        cmd.partial = cmd.partial or report.interrupted
        for key, batch in report.batches.items():
            cmd.batch_done(f"samples_{key}.csv", batch)
        for table, rows in report.tables.items():
            cmd.run.write_table(f"{table}.csv", rows)
        cmd.run.write_estimate("report.json", {"name": report.name, "interrupted": report.interrupted, **report.summary})
        cmd.summary = report.summary
    return cmd.result()
