"""Command-line entry points: run a config grid, re-report a run directory,
or dump representations from a checkpoint."""

from __future__ import annotations

import argparse
import sys

from .errors import TcnError
from .experiment import (dump_reps_from_files, format_aggregate_table,
                         load_config, report, run_experiment)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tcn",
        description="Multimodal semi-supervised consensus-training experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the experiment grid of a config file")
    p_run.add_argument("config", help="path to a flat key=value config")
    p_run.add_argument("--output-dir", default=None, help="override experiment.output_dir")

    p_report = sub.add_parser("report", help="rebuild the aggregate table of a run directory")
    p_report.add_argument("output_dir")

    p_dump = sub.add_parser("dump-reps", help="write per-sample representations to CSV")
    p_dump.add_argument("checkpoint", help="checkpoint .npz written by a run")
    p_dump.add_argument("dataset", help="canonical dataset dump .npz")
    p_dump.add_argument("-o", "--out", default="representations.csv")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.output_dir:
                config.output_dir = args.output_dir
            results, aggregate = run_experiment(config)
            print(format_aggregate_table(aggregate))
            failed = [r for r in results if r.status != "ok"]
            for r in failed:
                print(f"FAILED {r.variant} budget={r.label_budget} seed={r.seed}: {r.error}",
                      file=sys.stderr)
            return 1 if failed else 0
        if args.command == "report":
            results, aggregate = report(args.output_dir)
            print(format_aggregate_table(aggregate))
            return 0 if all(r.status == "ok" for r in results) else 1
        dump_reps_from_files(args.checkpoint, args.dataset, args.out)
        print(f"wrote {args.out}")
        return 0
    except TcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
