"""Command-line entry point.

Exit codes: 0 success, 2 bad config or arguments, 3 I/O failure,
4 internal invariant violation (the diagnostic names the invariant).
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, parse_config_ex
from .metrics import IncompleteRun, InvariantViolation, IoFailure
from .radio import calibrate_tx_power
from .runner import execute_run, expand_points, parse_sweep_flag


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonsim",
        description="Run seeded beaconing/braking experiments and write CSV results.",
    )
    parser.add_argument("--config", required=True, help="experiment config file (key = value lines)")
    parser.add_argument("--out", default="results", help="output directory (default: results)")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    parser.add_argument(
        "--replications", type=int, default=None, help="replications per sweep point (overrides config)"
    )
    parser.add_argument(
        "--sweep",
        action="append",
        default=[],
        metavar="KEY=V1,V2,...",
        help="sweep a parameter over listed values; repeatable, Cartesian",
    )
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key; repeatable",
    )
    parser.add_argument("--workers", type=int, default=1, help="parallel replication workers")
    parser.add_argument(
        "--validate",
        action="store_true",
        help="print the resolved config with provenance and exit without simulating",
    )
    return parser


def _validate_dump(base_text: str, overrides: list[str]) -> None:
    from .config import resolved_items

    config, provenance = parse_config_ex("\n".join([base_text, *overrides]))
    for key, value in resolved_items(config):
        print(f"{key} = {value}  [{provenance.get(key, 'default')}]")
    tx = calibrate_tx_power(config.radio, config.nominal_range_m)
    source = "user" if config.radio.tx_power_dbm is not None else "calibrated"
    print(f"effective_tx_power_dbm = {tx:.6g}  [{source}]")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    if args.replications is not None:
        overrides.append(f"replications = {args.replications}")
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            base_text = fh.read()
        sweeps = [parse_sweep_flag(raw) for raw in args.sweep]
        if args.validate:
            expand_points(base_text, overrides, sweeps)  # surfaces bad sweep values
            _validate_dump(base_text, overrides)
            return 0
        execute_run(base_text, args.out, overrides, sweeps, max(args.workers, 1))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IoFailure, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except (InvariantViolation, IncompleteRun) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
