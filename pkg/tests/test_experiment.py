import csv
import json

import numpy as np
import pytest

from funs.cli import main
from funs.data import SyntheticConfig, generate_synthetic
from funs.experiment import (COLUMNS, Cell, ExperimentConfig, aggregate, cell_seed, format_row, partition_for,
                             plan, read_results, run_cell, run_experiment, summarize)

TINY_DATA = {"synthetic": {"n_nodes": 24, "T": 96, "period": 48, "burn_in": 50, "seed": 5}}
TINY_TRAIN = {"epochs": 2, "window_len": 8, "windows_per_epoch": 2, "batch_windows": 2}


def tiny_config(tmp_path=None, **kw):
    base = dict(dataset=TINY_DATA, shares=[0.5], seeds=[0], horizons=[0], roster=["mean", "knn", "funs_n"],
                train=TINY_TRAIN, record_timing=False,
                output=str(tmp_path / "results.csv") if tmp_path is not None else None)
    base.update(kw)
    return ExperimentConfig(**base)


def test_cell_seeds_are_order_independent():
    a = cell_seed(3, 0.5, 12, 0)
    assert a == cell_seed(3, 0.5, 12, 0)
    assert len({cell_seed(3, 0.5, 12, s) for s in range(4)}) == 4
    assert cell_seed(3, 0.5, 12, 0) != cell_seed(3, 0.3, 12, 0)
    assert cell_seed(3, 0.5, 0, 0) != cell_seed(3, 0.5, 12, 0)
    assert partition_for(50, 0.5, 1) == partition_for(50, 0.5, 1)
    assert partition_for(50, 0.5, 1) != partition_for(50, 0.5, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=[])
    with pytest.raises(ValueError):
        ExperimentConfig(roster=[])
    with pytest.raises(ValueError):
        ExperimentConfig(roster=["transformer"])
    with pytest.raises(ValueError):
        ExperimentConfig(shares=[1.0])
    with pytest.raises(ValueError):
        ExperimentConfig(train={"learning_rat": 0.1})


def test_config_from_yaml_and_json(tmp_path):
    (tmp_path / "c.yaml").write_text("shares: [0.3]\nseeds: [1, 2]\nroster: [mean]\n")
    cfg = ExperimentConfig.from_file(tmp_path / "c.yaml", seeds=[7])
    assert cfg.shares == [0.3] and cfg.seeds == [7] and cfg.roster == ["mean"]
    (tmp_path / "c.json").write_text(json.dumps({"horizons": [12]}))
    assert ExperimentConfig.from_file(tmp_path / "c.json").horizons == [12]


def test_plan_covers_grid():
    cfg = ExperimentConfig(shares=[0.9, 0.1], seeds=[0, 1, 2], horizons=[0, 12], roster=["mean", "knn"])
    cells = plan(cfg)
    assert len(cells) == 2 * 3 * 2 * 2 and len(set(cells)) == len(cells)


def test_run_writes_rows_and_shares_partition(tmp_path):
    cfg = tiny_config(tmp_path, roster=["mean", "knn", "gpr", "funs_n", "funs_n_no_labels"])
    result = run_experiment(cfg)
    assert result.ok and len(result.rows) == 5 and len(result.partitions) == 1
    with open(cfg.output, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == COLUMNS and len(rows) == 6
    back = read_results(cfg.output)
    assert all(np.isfinite(r["test_mse"]) and r["wall_ms"] == 0 for r in back)


def test_cells_are_byte_identical_on_repeat(tmp_path):
    cfg = tiny_config(horizons=[12], roster=["funs_n", "knn_lstm"])
    bundle = generate_synthetic(SyntheticConfig(**TINY_DATA["synthetic"]))
    for cell in plan(cfg):
        r1 = run_cell(bundle, cfg, cell)
        r2 = run_cell(bundle, cfg, cell)
        assert format_row(r1) == format_row(r2)


def test_cell_result_does_not_depend_on_roster(tmp_path):
    bundle = generate_synthetic(SyntheticConfig(**TINY_DATA["synthetic"]))
    cell = Cell("funs_n", 0.5, 0, 0)
    a = run_cell(bundle, tiny_config(roster=["funs_n"]), cell)
    b = run_cell(bundle, tiny_config(roster=["mean", "knn", "funs_n"], seeds=[4, 0]), cell)
    assert format_row(a) == format_row(b)


def test_failed_cells_become_error_rows(tmp_path):
    cfg = tiny_config(tmp_path, roster=["mean", "funs_n"], train={**TINY_TRAIN, "window_len": 500})
    result = run_experiment(cfg)
    assert not result.ok and len(result.errors) == 1
    rows = read_results(cfg.output)
    assert len(rows) == 2 and np.isnan([r for r in rows if r["model"] == "funs_n"][0]["test_mse"])


def test_parallel_jobs_match_serial(tmp_path):
    serial = run_experiment(tiny_config(roster=["mean", "knn", "gpr"], seeds=[0, 1]))
    parallel = run_experiment(tiny_config(roster=["mean", "knn", "gpr"], seeds=[0, 1]), jobs=2)
    key = lambda r: (r["model"], r["seed"])  # noqa: E731
    assert sorted(map(format_row, serial.rows)) == sorted(map(format_row, parallel.rows))
    assert sorted(serial.rows, key=key) == sorted(parallel.rows, key=key)


def test_aggregate_single_seed_and_missing():
    rows = [
        {"model": "m", "share": 0.5, "horizon": 0, "seed": 0, "test_mse": 2.0},
        {"model": "k", "share": 0.5, "horizon": 0, "seed": 0, "test_mse": 1.0},
        {"model": "k", "share": 0.5, "horizon": 0, "seed": 1, "test_mse": 3.0},
        {"model": "k", "share": 0.5, "horizon": 0, "seed": 2, "test_mse": float("nan")},
        {"model": "f", "share": 0.5, "horizon": 0, "seed": 0, "test_mse": float("nan")},
    ]
    agg = {a["model"]: a for a in aggregate(rows)}
    assert agg["m"]["std"] == 0.0 and agg["m"]["mean"] == 2.0
    assert agg["k"]["mean"] == 2.0 and agg["k"]["std"] == 1.0 and agg["k"]["missing"] == 1
    assert agg["f"]["n"] == 0 and np.isnan(agg["f"]["mean"])


def test_summarize_renders_table(tmp_path):
    cfg = tiny_config(tmp_path, roster=["mean", "knn"], seeds=[0, 1])
    run_experiment(cfg)
    agg, text = summarize(cfg.output, tmp_path / "summary.csv")
    assert "horizon t=0" in text and "knn" in text and "50%" in text
    assert (tmp_path / "summary.csv").read_text().startswith("model,share,horizon")
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        summarize(tmp_path / "bad.csv")


def test_cli_generate_run_summarize(tmp_path, capsys):
    data_dir = tmp_path / "data"
    assert main(["generate", str(data_dir), "--seed", "3", "--set", "n_nodes=24", "--set", "T=96",
                 "--set", "burn_in=50"]) == 0
    assert (data_dir / "values.csv").exists() and (data_dir / "edges.csv").exists()

    cfg_file = tmp_path / "exp.json"
    cfg_file.write_text(json.dumps({"shares": [0.5], "seeds": [0], "horizons": [0], "roster": ["mean", "funs_n"],
                                    "train": TINY_TRAIN}))
    out = tmp_path / "res.csv"
    assert main(["run", "--config", str(cfg_file), "--data", str(data_dir), "--output", str(out),
                 "--models", "mean,knn", "--no-timing"]) == 0
    assert [r["model"] for r in read_results(out)] == ["mean", "knn"]

    assert main(["run", "--config", str(cfg_file), "--dry-run", "--seeds", "0,1"]) == 0
    printed = capsys.readouterr().out
    assert "4 cells" in printed and "funs_n,0.5,0,1" in printed

    assert main(["summarize", str(out)]) == 0
    assert "mean" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--models", "nonsense", "--dry-run"]) == 2
    fail = main(["run", "--shares", "0.5", "--seeds", "0", "--horizons", "0", "--models", "funs_n",
                 "--train", "window_len=100000", "--output", str(tmp_path / "r.csv")])
    assert fail == 1
