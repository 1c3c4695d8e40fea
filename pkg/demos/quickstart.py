"""Train FUNS-N on a small synthetic road network and compare it with the
spatial baselines on the hidden test nodes.

    python demos/quickstart.py
"""
import numpy as np

from funs import (FunsNet, SyntheticConfig, TrainConfig, build_mask, evaluate, generate_synthetic,
                  split_nodes, train, zscore)
from funs.baselines import spatial_mse

# 60 sensors, two days at a 48-step period; z-scored per channel
raw = generate_synthetic(SyntheticConfig(n_nodes=60, T=160, period=48, burn_in=100, seed=1))
bundle, stats = zscore(raw)
graph, X = bundle.graph, bundle.values
print(f"{graph.n} nodes, {len(graph.edges)} edges, {bundle.T} steps, {graph.num_labels} label columns")

# half of the nodes are observed; the rest split into validation and test
part = split_nodes(graph.n, observed_share=0.5, seed=0)
print(f"inputs {len(part.v_in)}, loss-only {len(part.v_opt)}, val {len(part.v_val)}, test {len(part.v_test)}")

model = FunsNet(d=bundle.d, z=graph.num_labels, h=8, seed=0)
cfg = TrainConfig(epochs=30, learning_rate=5e-3, window_len=24, windows_per_epoch=8, batch_windows=2,
                  val_every=5)
model, report = train(model, X, graph, part, cfg)
print(f"best validation MSE {report.best_val_mse:.3f} at epoch {report.best_epoch}")

scores = {"funs_n": evaluate(model, X, graph, part, 0, "test")}
for method in ("mean", "knn", "gpr"):
    scores[method] = spatial_mse(method, X, graph, part)
for name, mse in sorted(scores.items(), key=lambda kv: kv[1]):
    print(f"  {name:8s} test MSE {mse:.3f}")

# estimates for every node at the last step, back in original units
pred = model.predict(X, build_mask(part.v_in, graph.n), graph, graph.labels)
last = stats.inverse(pred[-1])
print("unobserved node", part.v_test[0], "estimate in generator units", np.round(last[part.v_test[0]], 3))
