"""Command line front end.

Three subcommands cover the full loop:

- ``generate``: materialize a synthetic dataset to disk from a config file.
- ``run``: execute a sweep config, writing CSV/JSON outputs per cell.
- ``report``: merge the CSVs of one or more runs and render figures.

Examples::

    cuebench generate --config synth.json --out data/
    cuebench run --config run.json --out results/ --backend bf --lambda 0,4,16
    cuebench report results_a/ results_b/ --out summary/
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from .dataset import SyntheticConfig, generate_synthetic, save_dataset
from .runner import (
    BACKEND_NAMES,
    PR_COLUMNS,
    RunConfig,
    SWEEP_COLUMNS,
    csv_text,
    run_sweep,
)


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in a u64, got {value}")
    return value


def _lambda_list(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("expected a comma-separated list of weights")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"weights must be integers, got {text!r}"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cuebench",
        description="Cue-augmented binary descriptor benchmark driver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser(
        "generate", help="write a synthetic dataset described by a config file"
    )
    p_gen.add_argument("--config", required=True, help="synthetic config JSON")
    p_gen.add_argument("--out", required=True, help="dataset output directory")
    p_gen.add_argument("--seed", type=_u64, help="override the config seed")

    p_run = sub.add_parser("run", help="execute a sweep config")
    p_run.add_argument("--config", required=True, help="run config JSON")
    p_run.add_argument("--out", required=True, help="sweep output directory")
    p_run.add_argument(
        "--backend",
        choices=BACKEND_NAMES,
        help="restrict the sweep to one backend",
    )
    p_run.add_argument(
        "--lambda",
        dest="lambda_values",
        type=_lambda_list,
        help="comma-separated augmentation weights overriding the config",
    )
    p_run.add_argument("--seed", type=_u64, help="override the config seed")

    p_rep = sub.add_parser(
        "report", help="merge run CSVs and render summary figures"
    )
    p_rep.add_argument(
        "inputs", nargs="+", help="one or more run output directories"
    )
    p_rep.add_argument("--out", required=True, help="report output directory")
    return parser


def _load_json(path) -> dict:
    with open(path, "r") as fh:
        return json.load(fh)


def cmd_generate(args) -> int:
    doc = _load_json(args.config)
    if not isinstance(doc, dict):
        raise ValueError(f"{args.config}: config must be a JSON object")
    if "dataset" in doc:
        doc = doc["dataset"]
    if "synthetic" in doc:
        doc = doc["synthetic"]
    if "manifest" in doc:
        raise ValueError(
            f"{args.config}: config points at an existing manifest; "
            "generate needs a synthetic description"
        )
    config = SyntheticConfig.from_config(doc)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    images, gt = generate_synthetic(config)
    manifest = save_dataset(args.out, images, gt)
    print(f"wrote {len(images)} images to {manifest}")
    return 0


def cmd_run(args) -> int:
    config = RunConfig.from_json_file(args.config)
    overrides = {}
    if args.backend is not None:
        overrides["backends"] = (args.backend,)
    if args.lambda_values is not None:
        overrides["lambdas"] = args.lambda_values
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = replace(config, **overrides)
    reports = run_sweep(config, args.out)
    for r in reports:
        line = (
            f"{r.backend} lambda={r.lambda_} map={r.map_score:.4f} "
            f"queries={r.evaluable_query_count}/{r.query_count}"
        )
        if r.mean_processing_time_seconds is not None:
            line += f" t_mean={r.mean_processing_time_seconds:.6f}s"
        print(line)
    print(f"wrote outputs to {args.out}")
    return 0


def _read_rows(path, columns) -> list:
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(columns):
            raise ValueError(
                f"{path}: unexpected columns {reader.fieldnames}; "
                f"expected {list(columns)}"
            )
        return list(reader)


def cmd_report(args) -> int:
    # plots pull in matplotlib, so keep the import local to this command
    from .plots import plot_map_vs_lambda, plot_pr_curves

    summary_rows = []
    pr_rows = []
    for directory in args.inputs:
        sweep_path = os.path.join(directory, "sweep.csv")
        if not os.path.isfile(sweep_path):
            raise ValueError(f"{directory}: no sweep.csv (not a run directory?)")
        summary_rows.extend(_read_rows(sweep_path, SWEEP_COLUMNS))
        for name in sorted(os.listdir(directory)):
            if name.startswith("pr_") and name.endswith(".csv"):
                pr_rows.extend(
                    _read_rows(os.path.join(directory, name), PR_COLUMNS)
                )

    os.makedirs(args.out, exist_ok=True)
    summary_path = os.path.join(args.out, "summary.csv")
    with open(summary_path, "w") as fh:
        fh.write(csv_text(SWEEP_COLUMNS, summary_rows))
    curves_path = os.path.join(args.out, "curves.csv")
    with open(curves_path, "w") as fh:
        fh.write(csv_text(PR_COLUMNS, pr_rows))
    map_figure = plot_map_vs_lambda(
        summary_rows, os.path.join(args.out, "map_vs_lambda.png")
    )
    pr_figure = plot_pr_curves(pr_rows, os.path.join(args.out, "pr_curves.png"))
    for path in (summary_path, curves_path, map_figure, pr_figure):
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
