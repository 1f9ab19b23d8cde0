"""Command line entry point: generate, estimate, summarize, diagnose."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .config import load_config, parse_override_value
from .const import EXIT_CONFIG_ERROR, EXIT_ESTIMATION_FAILURE, EXIT_OK, PRESETS
from .exceptions import ConfigError, ContractViolation, SaemAbcError
from .experiment import cmd_diagnose, cmd_estimate, cmd_generate, cmd_summarize, format_summary

_LOGGER = logging.getLogger(__name__)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="experiment config (JSON)")
    source.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saemabc",
        description="SAEM with ABC-SMC and baseline estimators for state-space models.",
        epilog="Any config field can be overridden with --dotted.path VALUE, e.g. --algorithm.M 500",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="simulate a dataset", allow_abbrev=False)
    _add_config_arguments(generate)

    estimate = sub.add_parser("estimate", help="run replicated estimation", allow_abbrev=False)
    _add_config_arguments(estimate)
    estimate.add_argument("--dataset", type=Path, help="observations CSV (shared data mode)")
    estimate.add_argument("--jobs", type=int, help="parallel replicates")

    summarize = sub.add_parser("summarize", help="medians and quartiles from reports", allow_abbrev=False)
    summarize.add_argument("reports", nargs="+", type=Path)
    summarize.add_argument("--out", type=Path, help="directory for summary.csv / summary.txt")
    summarize.add_argument("--log-scale", action="store_true", help="summarise log estimates")

    diagnose = sub.add_parser("diagnose", help="filter ESS and distinct-particle study", allow_abbrev=False)
    _add_config_arguments(diagnose)
    diagnose.add_argument("--dataset", type=Path)
    diagnose.add_argument("--repetitions", type=int)

    return parser


def parse_overrides(extras: Sequence[str]) -> list[tuple[str, object]]:
    """['--a.b', '3', '--c=x'] -> [('a.b', 3), ('c', 'x')]."""
    overrides = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError("arguments", f"unexpected argument '{token}'")
        key = token[2:]
        if "=" in key:
            key, text = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(key, "override needs a value")
            text = extras[i + 1]
            i += 2
        overrides.append((key, parse_override_value(text)))
    return overrides


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        overrides = parse_overrides(extras)
        if args.command == "summarize":
            if overrides:
                raise ConfigError("arguments", "summarize takes no config overrides")
            table = cmd_summarize(args.reports, args.out, log_scale=args.log_scale)
            print(format_summary(table))
            return EXIT_OK

        if getattr(args, "repetitions", None) is not None:
            overrides.append(("diagnose.repetitions", args.repetitions))
        cfg = load_config(
            args.config,
            preset=args.preset,
            overrides=overrides,
            seed=args.seed,
            jobs=getattr(args, "jobs", None),
        )

        if args.command == "generate":
            cmd_generate(cfg, args.out)
            return EXIT_OK
        if args.command == "diagnose":
            summary = cmd_diagnose(cfg, args.dataset, args.out)
            print(summary.to_string(index=False))
            return EXIT_OK

        report = cmd_estimate(cfg, args.dataset, args.out)
        if report.n_succeeded == 0:
            _LOGGER.error("❌ All %d replicate(s) failed", report.n_failed)
            return EXIT_ESTIMATION_FAILURE
        return EXIT_OK

    except (ConfigError, ContractViolation, FileNotFoundError) as err:
        _LOGGER.error("❌ %s", err)
        return EXIT_CONFIG_ERROR
    except SaemAbcError as err:
        _LOGGER.error("❌ Estimation failed: %s", err)
        return EXIT_ESTIMATION_FAILURE


def main() -> None:
    sys.exit(run())
