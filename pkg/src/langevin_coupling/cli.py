from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Sequence

from .config import ENV_PREFIX, load_config
from .errors import ConfigError, LandscapeError
from .experiments.plans import EXPERIMENT_NAMES
from .runtime.runner import CommandResult, cmd_estimate, cmd_experiment, cmd_oracle, cmd_sample, cmd_sweep

logger = logging.getLogger("langevin_coupling")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="root of the run directories (default: runs)")
    p.add_argument("--budget", type=int, default=None, help="samples per noise level")
    p.add_argument("--log-level", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="langevin-coupling")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p_sample = sub.add_parser("sample", help="Simulate coupled pairs and write coupling-time samples")
    _common(p_sample)

    p_est = sub.add_parser("estimate", help="Exponential-tail rate of existing sample files")
    _common(p_est)
    p_est.add_argument("paths", nargs="+")
    p_est.add_argument("--bootstrap", type=int, default=0, help="parametric bootstrap replicates for the rate error")

    p_sweep = sub.add_parser("sweep", help="Rates over a noise grid and the barrier extrapolation")
    _common(p_sweep)

    p_oracle = sub.add_parser("oracle", help="Deterministic barrier heights (grid minimax, string method)")
    _common(p_oracle)

    p_exp = sub.add_parser("experiment", help="Run one of the reference studies")
    _common(p_exp)
    p_exp.add_argument("name", nargs="?", choices=EXPERIMENT_NAMES)
    return parser


def _configure_logging(level: str | None) -> None:
    name = (level or os.environ.get(ENV_PREFIX + "LOG_LEVEL") or "INFO").upper()
    if not isinstance(logging.getLevelName(name), int):
        raise ConfigError(f"unknown log level {name!r}", key="log_level")
    logging.basicConfig(level=name, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level)
        flags = {
            "seed": args.seed,
            "workers": args.workers,
            "out": args.out,
            "budget": args.budget,
            "log_level": args.log_level,
        }
        cfg = load_config(args.config, flags=flags)

        result: CommandResult
        if args.cmd == "sample":
            result = cmd_sample(cfg)
        elif args.cmd == "estimate":
            result = cmd_estimate(cfg, args.paths, bootstrap=args.bootstrap)
        elif args.cmd == "sweep":
            result = cmd_sweep(cfg)
        elif args.cmd == "oracle":
            result = cmd_oracle(cfg)
        else:
            result = cmd_experiment(cfg, args.name)
    except LandscapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("\ninterrupted", file=sys.stderr)
        return 1

    print(str(result.run_dir))
    if result.partial:
        logger.warning("run was interrupted; %s holds partial results", result.run_dir)
    return 0


def main() -> None:
    sys.exit(run())
