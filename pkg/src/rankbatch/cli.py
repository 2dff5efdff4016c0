"""Command-line entry points for running and plotting benchmark sweeps."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .bench import (
    RunRecord,
    records_to_csv,
    run_ablation,
    run_experiment,
    summarize,
    sweep_k,
    sweep_lambda_ot,
    CSV_COLUMNS,
)
from .config import SCHEMA_VERSION, ExperimentConfig
from .plots import accuracy_vs_budget_svg, lambda_sweep_svg, summary_tsv

OUTPUT_DIR_ENV = "RANKBATCH_OUTPUT_DIR"


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        config = ExperimentConfig()
    if args.seeds:
        config.seeds = [int(s) for s in args.seeds.split(",")]
    if args.budgets:
        config.budgets = [int(b) for b in args.budgets.split(",")]
    if args.methods:
        config.methods = args.methods.split(",")
    out = os.environ.get(OUTPUT_DIR_ENV) or args.output_dir
    if out:
        config.output_dir = out
    return config


def _out_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path

def _write_common(out: Path, config: ExperimentConfig, records, errors) -> None:
    (out / "config.json").write_text(config.to_json())
    (out / "results.csv").write_text(records_to_csv(records))
    (out / "summary.tsv").write_text(summary_tsv(records))
    if errors:
        (out / "errors.json").write_text(json.dumps(errors, indent=2))
    for e in errors:
        print(f"run failed: seed={e['seed']} method={e['method']} B={e['B']}: {e['error']}", file=sys.stderr)


def cmd_run(args) -> int:
    config = _load_config(args)
    records, summary, errors = run_experiment(config)
    out = _out_dir(config)
    _write_common(out, config, records, errors)
    if records:
        (out / "accuracy_vs_budget.svg").write_text(accuracy_vs_budget_svg(records))
    for (method, budget), (mean, se) in sorted(summary.items()):
        print(f"{method:10s} B={budget:5d}  val acc {mean:.4f} +/- {se:.4f}")
    return 1 if errors and not records else 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    rows, records, errors = run_ablation(config)
    out = _out_dir(config)
    _write_common(out, config, records, errors)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    for r in rows:
        def mark(v):
            return "-" if v is None else ("x" if v else ".")
        print(f"bilevel={mark(r['bilevel'])} ot={mark(r['ot'])} ranknet={mark(r['ranknet'])} "
              f"B={r['B']}  {r['mean']:.4f} +/- {r['se']:.4f}")
    return 1 if errors and not records else 0


def cmd_sweep_lambda_ot(args) -> int:
    config = _load_config(args)
    values = [float(v) for v in args.values.split(",")] if args.values else None
    rows, records = sweep_lambda_ot(config, values)
    out = _out_dir(config)
    _write_common(out, config, records, [])
    (out / "lambda_ot_sweep.json").write_text(json.dumps(rows, indent=2))
    (out / "lambda_ot_sweep.svg").write_text(lambda_sweep_svg(rows))
    for r in rows:
        print(f"lambda_ot={r['lambda_ot']:g} B={r['B']}  {r['mean']:.4f} +/- {r['se']:.4f}")
    return 0


def cmd_sweep_k(args) -> int:
    config = _load_config(args)
    k_values = [int(v) for v in args.k_values.split(",")]
    rows, records = sweep_k(config, k_values)
    out = _out_dir(config)
    _write_common(out, config, records, [])
    (out / "k_sweep.json").write_text(json.dumps(rows, indent=2))
    for r in rows:
        print(f"k={r['k']} {r['method']:10s} B={r['B']}  {r['mean']:.4f} +/- {r['se']:.4f}")
    return 0


def cmd_plot(args) -> int:
    rows = []
    with open(args.csv) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise SystemExit(f"unexpected CSV columns {reader.fieldnames}")
        for row in reader:
            if int(row["schema_version"]) != SCHEMA_VERSION:
                raise SystemExit(f"unsupported CSV schema_version {row['schema_version']}")
            rows.append(
                RunRecord(
                    seed=int(row["seed"]), method=row["method"], dataset=row["dataset"],
                    k=int(row["k"]), B=int(row["B"]), lambda_ot=float(row["lambda_ot"]),
                    bilevel=bool(int(row["bilevel"])), ot=bool(int(row["ot"])),
                    ranknet=bool(int(row["ranknet"])), val_accuracy=float(row["val_accuracy"]),
                    test_accuracy=float(row["test_accuracy"]),
                    pretrain_seconds=float(row["pretrain_seconds"]),
                    acquire_seconds=float(row["acquire_seconds"]),
                )
            )
    out = Path(os.environ.get(OUTPUT_DIR_ENV) or args.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "accuracy_vs_budget.svg").write_text(accuracy_vs_budget_svg(rows))
    (out / "summary.tsv").write_text(summary_tsv(rows))
    for (method, budget), (mean, se) in sorted(summarize(rows).items()):
        print(f"{method:10s} B={budget:5d}  val acc {mean:.4f} +/- {se:.4f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rankbatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--output-dir", default="", help=f"output directory (or ${OUTPUT_DIR_ENV})")
        p.add_argument("--seeds", default="", help="comma-separated seed list override")
        p.add_argument("--budgets", default="", help="comma-separated budget list override")
        p.add_argument("--methods", default="", help="comma-separated method list override")

    p = sub.add_parser("run", help="run methods across seeds and budgets")
    common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ablate", help="8 toggle combinations + random baseline")
    common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-lambda-ot", help="sweep the OT loss weight")
    common(p)
    p.add_argument("--values", default="", help="comma-separated lambda_ot values")
    p.set_defaults(fn=cmd_sweep_lambda_ot)

    p = sub.add_parser("sweep-k", help="sweep the pretraining pool size")
    common(p)
    p.add_argument("--k-values", required=True, help="comma-separated k values")
    p.set_defaults(fn=cmd_sweep_k)

    p = sub.add_parser("plot", help="re-plot from an existing results CSV")
    p.add_argument("csv", help="results CSV path")
    p.add_argument("--output-dir", default="", help="where to write plots")
    p.set_defaults(fn=cmd_plot)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
