"""Forecast 12 steps ahead at unobserved nodes: FUNS-N against kNN imputation
followed by a shared per-node LSTM, with a chronological train/val/test split.

    python demos/forecast.py
"""
from funs import (FunsNet, SyntheticConfig, TimeSplit, TrainConfig, evaluate, generate_synthetic,
                  split_nodes, train, zscore)
from funs.baselines import impute_then_forecast, spatial_mse

HORIZON = 12

raw = generate_synthetic(SyntheticConfig(n_nodes=60, T=200, period=48, burn_in=100, seed=2))
ts = TimeSplit.from_fractions(raw.T, 0.7, 0.85)
part = split_nodes(raw.graph.n, 0.5, seed=0)
# statistics from the training range and the observed nodes only
bundle, _ = zscore(raw, ts, part.observed)
X, graph = bundle.values, bundle.graph
print(f"train [0, {ts.P}), validation [{ts.P}, {ts.Q}), test [{ts.Q}, {ts.T})")

cfg = TrainConfig(horizon=HORIZON, epochs=30, learning_rate=5e-3, window_len=24, windows_per_epoch=8,
                  batch_windows=2, val_every=5)
model, _ = train(FunsNet(d=bundle.d, z=graph.num_labels, h=8, seed=0), X, graph, part, cfg, ts)
funs = evaluate(model, X, graph, part, HORIZON, "test", ts)

_, lstm, _ = impute_then_forecast("knn", X, graph, part, cfg, ts)
knn = spatial_mse("knn", X, graph, part, HORIZON, "test", ts)
mean = spatial_mse("mean", X, graph, part, HORIZON, "test", ts)
for name, mse in [("funs_n", funs), ("knn_lstm", lstm), ("knn (persistence)", knn), ("mean", mean)]:
    print(f"  {name:18s} t={HORIZON} test MSE {mse:.3f}")
