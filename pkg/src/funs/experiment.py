"""Sweeps over observed shares, seeds, horizons and models.

Seeding scheme: every random stream of a cell is derived from
``SeedSequence([seed, share_key, horizon, stream])`` where ``share_key``
is the share in basis points. The node partition uses
``SeedSequence([seed, share_key])`` only, so every model and horizon in a
(share, seed) cell sees the same partition, and parameter initialization
uses the same stream for every model. Cells therefore do not depend on
execution order.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import GprConfig, impute_then_forecast, spatial_mse
from .data import DatasetBundle, SyntheticConfig, generate_synthetic, load_csv_dataset, zscore
from .graph import NodePartition, TimeSplit, split_nodes
from .model import FunsNet
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

COLUMNS = ("model", "share", "horizon", "seed", "val_mse", "test_mse", "wall_ms")
ROSTER = ("funs_n", "funs_n_no_labels", "mean", "knn", "gpr", "knn_lstm", "gpr_lstm", "all_observed_bound")

# Training budget used for desk-scale sweeps unless overridden.
DESK_TRAIN = {
    "epochs": 50,
    "learning_rate": 5e-3,
    "windows_per_epoch": 8,
    "batch_windows": 2,
    "val_every": 5,
}


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    shares: list = field(default_factory=lambda: [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    horizons: list = field(default_factory=lambda: [0, 12])
    roster: list = field(default_factory=lambda: ["funs_n", "funs_n_no_labels", "mean", "knn", "knn_lstm"])
    train: dict = field(default_factory=lambda: dict(DESK_TRAIN))
    gpr: dict = field(default_factory=dict)
    train_frac: float = 0.7
    val_frac: float = 0.85
    output: Optional[str] = None
    record_timing: bool = True
    cell_budget_seconds: Optional[float] = None

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not self.roster:
            raise ValueError("model roster is empty")
        for s in self.shares:
            if not 0.0 < s < 1.0:
                raise ValueError(f"share {s} outside (0, 1)")
        unknown = set(self.roster) - set(ROSTER)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}; choose from {ROSTER}")
        known = {f.name for f in fields(TrainConfig)}
        bad = set(self.train) - known
        if bad:
            raise ValueError(f"unknown training options {sorted(bad)}")

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        text = Path(path).read_text(encoding="utf-8")
        if str(path).endswith((".yaml", ".yml")):
            import yaml
            raw = yaml.safe_load(text) or {}
        else:
            raw = json.loads(text)
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Cell:
    model: str
    share: float
    horizon: int
    seed: int


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    partitions: dict = field(default_factory=dict)  # (share, seed) -> digest

    @property
    def ok(self) -> bool:
        return not self.errors


def share_key(share: float) -> int:
    return int(round(share * 10000))


def cell_seed(seed: int, share: float, horizon: int, stream: int) -> int:
    ss = np.random.SeedSequence([int(seed), share_key(share), int(horizon), int(stream)])
    return int(ss.generate_state(1)[0])


def partition_for(n: int, share: float, seed: int) -> NodePartition:
    ss = np.random.SeedSequence([int(seed), share_key(share)])
    return split_nodes(n, share, ss)


def plan(config: ExperimentConfig) -> list:
    return [Cell(m, float(s), int(h), int(seed))
            for s in config.shares for seed in config.seeds for h in config.horizons for m in config.roster]


def load_dataset(spec: dict) -> DatasetBundle:
    if "synthetic" in spec:
        return generate_synthetic(SyntheticConfig(**(spec["synthetic"] or {})))
    if "csv" in spec:
        c = spec["csv"]
        return load_csv_dataset(c["values"], c["coords"], c.get("labels"), c.get("delta"), c.get("edges"))
    raise ValueError("dataset must define 'synthetic' or 'csv'")


def _time_split(config, T, horizon):
    # live prediction (horizon 0) separates train/val/test by nodes only
    if horizon == 0:
        return None
    return TimeSplit.from_fractions(T, config.train_frac, config.val_frac)


def run_cell(bundle: DatasetBundle, config: ExperimentConfig, cell: Cell) -> dict:
    """Train/evaluate one model in one cell; returns a result row."""
    t0 = time.perf_counter()
    part = partition_for(bundle.n, cell.share, cell.seed)
    ts = _time_split(config, bundle.T, cell.horizon)
    norm, _ = zscore(bundle, ts, part.observed)
    X, graph = norm.values, norm.graph
    tcfg = TrainConfig(**{**config.train, "horizon": cell.horizon,
                          "seed": cell_seed(cell.seed, cell.share, cell.horizon, 1),
                          "max_seconds": config.cell_budget_seconds})
    init_seed = cell_seed(cell.seed, cell.share, cell.horizon, 0)
    gcfg = GprConfig(**config.gpr)
    name = cell.model

    if name in ("mean", "knn", "gpr"):
        val = spatial_mse(name, X, graph, part, cell.horizon, "val", ts, gcfg)
        test = spatial_mse(name, X, graph, part, cell.horizon, "test", ts, gcfg)
    elif name in ("knn_lstm", "gpr_lstm"):
        val, test, _ = impute_then_forecast(name.split("_")[0], X, graph, part, tcfg, ts, gcfg)
    elif name in ("funs_n", "funs_n_no_labels", "all_observed_bound"):
        if name == "funs_n_no_labels":
            graph = graph.with_labels(np.ones((graph.n, 1)))
        feed = tuple(range(graph.n)) if name == "all_observed_bound" else None
        model = FunsNet(d=X.shape[2], z=graph.num_labels, h=tcfg.hidden, dropout=tcfg.dropout, seed=init_seed)
        model, report = train(model, X, graph, part, tcfg, ts, input_nodes=feed, loss_nodes=feed)
        val = report.best_val_mse
        test = evaluate(model, X, graph, part, cell.horizon, "test", ts, input_nodes=feed)
    else:
        raise ValueError(f"unknown model {name!r}")

    wall = int(round((time.perf_counter() - t0) * 1000)) if config.record_timing else 0
    return {"model": name, "share": cell.share, "horizon": cell.horizon, "seed": cell.seed,
            "val_mse": float(val), "test_mse": float(test), "wall_ms": wall,
            "partition": part.digest()}


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else format(v, ".12g")
    return str(v)


def format_row(row: dict) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def _worker(args):
    bundle, config, cell = args
    try:
        return cell, run_cell(bundle, config, cell), None
    except Exception as exc:  # noqa: BLE001 - recorded as an error row
        return cell, None, f"{type(exc).__name__}: {exc}"


def run_experiment(config: ExperimentConfig, jobs: int = 1, bundle: Optional[DatasetBundle] = None) -> ExperimentResult:
    """Run every cell of the sweep, appending rows to ``config.output``
    (when set) as soon as each cell finishes."""
    bundle = bundle if bundle is not None else load_dataset(config.dataset)
    cells = plan(config)
    result = ExperimentResult()
    out = None
    if config.output:
        path = Path(config.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        out = open(path, "w", newline="", encoding="utf-8")
        out.write(",".join(COLUMNS) + "\n")
        out.flush()

    def record(cell, row, err):
        if err is not None:
            log.error("cell %s failed: %s", cell, err)
            result.errors.append((cell, err))
            row = {**asdict(cell), "val_mse": float("nan"), "test_mse": float("nan"), "wall_ms": 0}
        else:
            key = (cell.share, cell.seed)
            digest = row.pop("partition")
            prev = result.partitions.setdefault(key, digest)
            if prev != digest:
                raise RuntimeError(f"partition mismatch within cell {key}")
            log.info("%s share=%g h=%d seed=%d partition=%s val=%.4f test=%.4f",
                     cell.model, cell.share, cell.horizon, cell.seed, digest, row["val_mse"], row["test_mse"])
        result.rows.append(row)
        if out is not None:
            out.write(format_row(row))
            out.flush()

    try:
        if jobs <= 1:
            for cell in cells:
                record(*_worker((bundle, config, cell)))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_worker, (bundle, config, c)) for c in cells]
                for fut in as_completed(futures):
                    record(*fut.result())
    finally:
        if out is not None:
            out.close()
    return result


# -- summaries ----------------------------------------------------------------

def read_results(path) -> list:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: expected columns {COLUMNS}, got {reader.fieldnames}")
        for r in reader:
            rows.append({
                "model": r["model"], "share": float(r["share"]), "horizon": int(r["horizon"]),
                "seed": int(r["seed"]),
                "val_mse": float(r["val_mse"]) if r["val_mse"] else float("nan"),
                "test_mse": float(r["test_mse"]) if r["test_mse"] else float("nan"),
                "wall_ms": int(r["wall_ms"]) if r["wall_ms"] else 0,
            })
    return rows


def aggregate(rows) -> list:
    """Mean and population std of test MSE over seeds per (model, share,
    horizon); failed cells are counted in ``missing``."""
    groups = {}
    for r in rows:
        groups.setdefault((r["model"], r["share"], r["horizon"]), []).append(r["test_mse"])
    out = []
    for (model, share, horizon), vals in sorted(groups.items(), key=lambda kv: (kv[0][2], kv[0][0], -kv[0][1])):
        v = np.array(vals, dtype=np.float64)
        ok = v[~np.isnan(v)]
        out.append({
            "model": model, "share": share, "horizon": horizon, "n": int(ok.size),
            "missing": int(v.size - ok.size),
            "mean": float(ok.mean()) if ok.size else float("nan"),
            "std": float(ok.std()) if ok.size else float("nan"),
        })
    return out


def render_table(agg) -> str:
    """Models as rows, shares as columns, one block per horizon."""
    lines = []
    for h in sorted({a["horizon"] for a in agg}):
        block = [a for a in agg if a["horizon"] == h]
        shares = sorted({a["share"] for a in block}, reverse=True)
        models = list(dict.fromkeys(a["model"] for a in block))
        lines.append(f"horizon t={h}: test MSE, mean ± std over seeds")
        header = f"{'model':<20}" + "".join(f"{f'{s:.0%}':>15}" for s in shares)
        lines.append(header)
        for m in models:
            cells = []
            for s in shares:
                a = next((x for x in block if x["model"] == m and x["share"] == s), None)
                if a is None:
                    cells.append(f"{'-':>15}")
                elif a["n"] == 0:
                    cells.append(f"{'MISSING':>15}")
                else:
                    mark = "*" if a["missing"] else ""
                    cells.append(f"{a['mean']:.3f}±{a['std']:.3f}{mark}".rjust(15))
            lines.append(f"{m:<20}" + "".join(cells))
        lines.append("")
    if any(a["missing"] for a in agg):
        lines.append("* some seeds failed or are missing for this cell")
    return "\n".join(lines)


def summarize(result_path, out_csv=None):
    """Aggregate a results file; writes ``out_csv`` when given and returns
    ``(aggregated_rows, rendered_text)``."""
    agg = aggregate(read_results(result_path))
    if out_csv is not None:
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "share", "horizon", "n", "missing", "mean_test_mse", "std_test_mse"])
            for a in agg:
                w.writerow([a["model"], _fmt(a["share"]), a["horizon"], a["n"], a["missing"],
                            _fmt(a["mean"]), _fmt(a["std"])])
    return agg, render_table(agg)
