"""Command-line entry point.

Subcommands:
  run        execute an experiment from a JSON config
  report     build comparison tables from completed run directories
  gen-synth  write a synthetic biased dataset plus a ready-to-run config

Log verbosity comes from the FEDFAIR_LOG environment variable (DEBUG,
INFO, WARNING; default WARNING). Exit status is 0 on success, 1 on any
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .experiment import OutputDirError, run_experiment
from .federation import RunAbortedError
from .report import ReportError, emit_report
from .synth import synth_schema, write_synth_csv


def _setup_logging() -> None:
    level = os.environ.get("FEDFAIR_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    run_experiment(
        cfg,
        args.out,
        overwrite=args.overwrite,
        paired_privacy=args.paired_privacy,
    )
    print(f"run written to {args.out}")
    return 0


def _cmd_report(args) -> int:
    emit_report(args.runs, args.out)
    print(f"report written to {args.out}")
    return 0


def _cmd_gen_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "synth.csv"
    write_synth_csv(csv_path, args.rows, args.bias, args.seed)
    config = {
        "seed": args.seed,
        "data": {"csv": "synth.csv", "schema": synth_schema().to_dict()},
    }
    (out / "config.json").write_text(
        json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"synthetic dataset in {out} ({args.rows} rows, bias {args.bias})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedfair",
        description="Federated training with fairness constraints and local differential privacy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment")
    run_p.add_argument("--config", required=True, help="JSON config file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--overwrite", action="store_true", help="replace an existing run")
    run_p.add_argument(
        "--paired-privacy",
        action="store_true",
        help="run the same seed with privacy on and off and emit a comparison table",
    )
    run_p.set_defaults(func=_cmd_run)

    report_p = sub.add_parser("report", help="compare completed runs")
    report_p.add_argument("--runs", nargs="+", required=True, help="run directories")
    report_p.add_argument("--out", required=True, help="output directory")
    report_p.set_defaults(func=_cmd_report)

    synth_p = sub.add_parser("gen-synth", help="generate a synthetic biased dataset")
    synth_p.add_argument("--rows", type=int, default=2500)
    synth_p.add_argument("--bias", type=float, default=0.5, help="group base-rate gap")
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--out", required=True, help="output directory")
    synth_p.set_defaults(func=_cmd_gen_synth)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        OutputDirError,
        ReportError,
        RunAbortedError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
