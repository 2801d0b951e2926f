"""Command-line front end: train, export-dag, report-frequency, preprocess."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data as data_mod
from . import experiment
from .errors import LgpError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgptune",
        description="Linear genetic programming with tunable primitives "
        "for spectral and tabular regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run repeated cross-validated training")
    train.add_argument("--config", help="JSON configuration file (defaults apply without one)")
    train.add_argument("--data", required=True, help="input CSV (wavenumbers..., target, group)")
    train.add_argument("--out", required=True, help="output directory for reports")
    train.add_argument("--seed", type=int, help="override the configured seed")
    train.add_argument("--mode", choices=("fish", "srbench"), help="override the configured mode")
    train.add_argument("--workers", type=int, default=1, help="worker processes per run")

    dag = sub.add_parser("export-dag", help="render a saved model as a DOT graph")
    dag.add_argument("--model", required=True, help="saved program text (.lgp)")
    dag.add_argument("--out", help="output .dot path (stdout when omitted)")

    freq = sub.add_parser(
        "report-frequency", help="terminal-range coverage table over a run directory"
    )
    freq.add_argument("--run-dir", required=True, help="directory holding report_rep*.json")
    freq.add_argument("--out", help="output .tsv path (stdout when omitted)")

    prep = sub.add_parser("preprocess", help="apply a treatment preset and write a new CSV")
    prep.add_argument("--data", required=True)
    prep.add_argument(
        "--preset", required=True, choices=sorted(data_mod.TREATMENT_PRESETS)
    )
    prep.add_argument("--out", required=True)
    return parser


def _cmd_train(args) -> int:
    raw = {}
    if args.config:
        raw = experiment.read_raw_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.mode is not None:
        raw["mode"] = args.mode
    cfg = experiment.resolve_run_config(raw)
    dataset = data_mod.load_csv(args.data)
    summary = experiment.run_training(cfg, dataset, args.out, workers=max(1, args.workers))
    print(
        f"test R2 mean {summary['test_r2_mean']:.4f} "
        f"(+/- {summary['test_r2_std']:.4f}) over {summary['fold_count']} folds"
    )
    return 0


def _cmd_export_dag(args) -> int:
    dot = experiment.export_dag_file(args.model, args.out)
    if args.out is None:
        sys.stdout.write(dot)
    return 0


def _cmd_report_frequency(args) -> int:
    table = experiment.frequency_table(args.run_dir)
    if args.out is None:
        sys.stdout.write(table)
    else:
        Path(args.out).write_text(table)
    return 0


def _cmd_preprocess(args) -> int:
    dataset = data_mod.load_csv(args.data)
    data_mod.save_csv(data_mod.apply_treatment(dataset, args.preset), args.out)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "export-dag": _cmd_export_dag,
    "report-frequency": _cmd_report_frequency,
    "preprocess": _cmd_preprocess,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (LgpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
