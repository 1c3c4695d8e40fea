"""Command line entry point: ``funs generate | run | summarize``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .data import SyntheticConfig, generate_synthetic, write_csv_dataset
from .experiment import ExperimentConfig, plan, run_experiment, summarize

log = logging.getLogger("funs")


def _floats(text):
    return [float(x) for x in text.split(",") if x]


def _ints(text):
    return [int(x) for x in text.split(",") if x]


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _pairs(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = _scalar(value.strip())
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="funs", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic road-network dataset as CSV")
    g.add_argument("out", type=Path, help="output directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                   help="generator option, e.g. --set n_nodes=200 (repeatable)")

    r = sub.add_parser("run", help="run an experiment sweep")
    r.add_argument("--config", type=Path, help="JSON or YAML experiment config")
    r.add_argument("--output", help="results CSV path")
    r.add_argument("--shares", type=_floats)
    r.add_argument("--seeds", type=_ints)
    r.add_argument("--horizons", type=_ints)
    r.add_argument("--models", type=_names, dest="roster")
    r.add_argument("--data", type=Path, help="CSV dataset directory instead of synthetic data")
    r.add_argument("--delta", type=float, help="distance threshold for CSV data without edges.csv")
    r.add_argument("--train", action="append", metavar="KEY=VALUE", help="training option override")
    r.add_argument("--budget", type=float, dest="cell_budget_seconds", help="wall seconds per cell")
    r.add_argument("--no-timing", action="store_true", help="write wall_ms=0 for reproducible rows")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--dry-run", action="store_true", help="print the cell plan and exit")

    s = sub.add_parser("summarize", help="aggregate a results CSV over seeds")
    s.add_argument("results", type=Path)
    s.add_argument("--out", type=Path, help="write the aggregate as CSV")
    return p


def _experiment_config(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in ("output", "shares", "seeds", "horizons", "roster",
                                               "cell_budget_seconds")}
    if args.no_timing:
        overrides["record_timing"] = False
    if args.data is not None:
        d = args.data
        overrides["dataset"] = {"csv": {
            "values": str(d / "values.csv"), "coords": str(d / "coords.csv"),
            "labels": str(d / "labels.csv") if (d / "labels.csv").exists() else None,
            "edges": str(d / "edges.csv") if (d / "edges.csv").exists() else None,
            "delta": args.delta}}
    if args.config is not None:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
    else:
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    if args.train:
        cfg.train = {**cfg.train, **_pairs(args.train)}
        cfg.__post_init__()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    if args.command == "generate":
        cfg = SyntheticConfig(**{**_pairs(args.overrides), "seed": args.seed})
        bundle = generate_synthetic(cfg)
        write_csv_dataset(bundle, args.out)
        print(f"wrote {bundle.T} steps x {bundle.n} nodes x {bundle.d} features to {args.out}")
        return 0

    if args.command == "run":
        try:
            cfg = _experiment_config(args)
        except (ValueError, TypeError) as exc:
            print(f"invalid configuration: {exc}", file=sys.stderr)
            return 2
        if args.dry_run:
            cells = plan(cfg)
            print(json.dumps(asdict(cfg), indent=2, sort_keys=True))
            print(f"{len(cells)} cells")
            for c in cells:
                print(f"{c.model},{c.share:g},{c.horizon},{c.seed}")
            return 0
        result = run_experiment(cfg, jobs=args.jobs)
        if not result.ok:
            for cell, err in result.errors:
                print(f"FAILED {cell}: {err}", file=sys.stderr)
            return 1
        return 0

    agg, text = summarize(args.results, args.out)
    print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
