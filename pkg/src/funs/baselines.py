"""Comparison methods: mean, graph kNN, per-step GP regression, and a
shared-weight LSTM fed by a spatial imputer."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from . import tensor as tn
from .graph import NodePartition, SensorGraph, TimeSplit, build_mask
from .tensor import Tensor
from .training import TrainConfig, eval_ranges, test_loss, train, evaluate


# -- mean ---------------------------------------------------------------------

def mean_predict(train_values, query_shape) -> np.ndarray:
    """Constant prediction: per-feature mean of all training observations.

    ``train_values`` is any array whose last axis is the feature axis;
    NaN entries are ignored.
    """
    v = np.asarray(train_values, dtype=np.float64)
    flat = v.reshape(-1, v.shape[-1])
    if flat.shape[0] == 0 or np.isnan(flat).all():
        raise ValueError("no training observations")
    mu = np.nanmean(flat, axis=0)
    return np.broadcast_to(mu, tuple(query_shape)[:-1] + (len(mu),)).copy()


# -- kNN ----------------------------------------------------------------------

def _observed_set(observed, n):
    obs = sorted(int(i) for i in observed)
    if not obs:
        raise ValueError("need at least one observed node")
    return obs


def knn_weights(observed, graph: SensorGraph) -> np.ndarray:
    """Linear operator ``M`` with ``M @ X_t`` = kNN estimate at time t.

    Observed rows are the identity. An unobserved node averages the
    observed nodes at the smallest hop distance along in-edges (ties all
    count); with no observed node reachable it uses the global observed
    mean.
    """
    n = graph.n
    obs = _observed_set(observed, n)
    is_obs = np.zeros(n, dtype=bool)
    is_obs[obs] = True
    M = np.zeros((n, n))
    for i in range(n):
        if is_obs[i]:
            M[i, i] = 1.0
            continue
        found = _nearest_observed(i, graph, is_obs)
        if not found:
            found = obs
        M[i, found] = 1.0 / len(found)
    return M


def _nearest_observed(i, graph, is_obs) -> list:
    seen = {i}
    frontier = [i]
    while frontier:
        nxt = []
        for u in frontier:
            for j in graph.in_neighbors[u]:
                if j not in seen:
                    seen.add(j)
                    nxt.append(j)
        hits = [j for j in nxt if is_obs[j]]
        if hits:
            return sorted(hits)
        frontier = nxt
    return []


def knn_predict(X_t, observed, graph: SensorGraph) -> np.ndarray:
    """kNN estimates for one step (``(n, d)``) or a sequence (``(T, n, d)``);
    observed rows are returned unchanged."""
    M = knn_weights(observed, graph)
    X = np.asarray(X_t, dtype=np.float64)
    X = np.where(build_mask(observed, graph.n)[:, None] > 0, X, 0.0)
    return M @ X if X.ndim == 2 else np.einsum("ij,tjd->tid", M, X)


# -- GPR ----------------------------------------------------------------------

@dataclass(frozen=True)
class GprConfig:
    sigma: float = 3.0
    noise: float = 0.1
    normalize_coords: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


def rbf_kernel(A, B, sigma):
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma ** 2))


def _norm_coords(coords, cfg):
    c = np.asarray(coords, dtype=np.float64)
    if not cfg.normalize_coords:
        return c
    sd = c.std(axis=0)
    return (c - c.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def gpr_weights(observed, coords, cfg: GprConfig = GprConfig()) -> np.ndarray:
    """Operator ``M`` with ``M @ X_t`` = posterior mean at every node given
    observations at ``observed`` (zero prior mean)."""
    if coords is None:
        raise ValueError("GP regression needs node coordinates")
    c = _norm_coords(coords, cfg)
    n = c.shape[0]
    obs = np.asarray(_observed_set(observed, n))
    K = rbf_kernel(c[obs], c[obs], cfg.sigma)
    jitter = cfg.noise
    for attempt in range(2):
        try:
            factor = cho_factor(K + jitter * np.eye(len(obs)), lower=True)
            break
        except LinAlgError:
            if attempt:
                raise LinAlgError(
                    f"GP kernel not positive definite even with jitter {jitter:g}; "
                    "raise GprConfig.noise or check for duplicate coordinates") from None
            jitter = max(jitter * 10.0, 1e-10 * np.trace(K) / len(obs))
    Kq = rbf_kernel(c, c[obs], cfg.sigma)
    M = np.zeros((n, n))
    M[:, obs] = cho_solve(factor, Kq.T).T
    return M


def gpr_predict(X_t, observed, coords, cfg: GprConfig = GprConfig()) -> np.ndarray:
    """Posterior-mean estimates for one step or a sequence, fit independently
    per step and feature; observed rows keep their values."""
    M = gpr_weights(observed, coords, cfg)
    X = np.asarray(X_t, dtype=np.float64)
    m = build_mask(observed, M.shape[0])[:, None] > 0
    X0 = np.where(m, X, 0.0)
    est = M @ X0 if X.ndim == 2 else np.einsum("ij,tjd->tid", M, X0)
    return np.where(m, X0, est)


def make_imputer(method: str, gpr_config: GprConfig = GprConfig()) -> Callable:
    """Return ``f(data, mask, graph) -> filled (T, n, d)`` for 'knn' or 'gpr'."""
    if method == "knn":
        return lambda data, m, graph: knn_predict(data, np.nonzero(m)[0], graph)
    if method == "gpr":
        return lambda data, m, graph: gpr_predict(data, np.nonzero(m)[0], graph.coords, gpr_config)
    raise ValueError(f"unknown imputer {method!r}")


def spatial_mse(method: str, data, graph: SensorGraph, partition: NodePartition, horizon: int = 0,
                split: str = "test", time_split: Optional[TimeSplit] = None,
                gpr_config: GprConfig = GprConfig()) -> float:
    """Score a purely spatial baseline: the estimate made at step w from the
    observations at w is used as the prediction for step w + horizon."""
    T, n, _ = data.shape
    nodes = partition.v_val if split == "val" else partition.v_test
    _, start, stop = eval_ranges(T, horizon, time_split, split)
    if method == "mean":
        train_end = T if time_split is None else time_split.P
        pred = mean_predict(data[:train_end][:, list(partition.observed), :], (stop - start, n, data.shape[2]))
    else:
        m = build_mask(partition.observed, n)
        pred = make_imputer(method, gpr_config)(data[start:stop], m, graph)
    return test_loss(pred, data[start + horizon:stop + horizon], build_mask(nodes, n))


# -- LSTM ---------------------------------------------------------------------

class LstmForecaster:
    """Per-node LSTM with parameters shared across nodes.

    Rows of each step's input are nodes; every row runs its own recurrence.
    ``imputer`` fills unobserved nodes before the sequence reaches the
    network (see :meth:`prepare_inputs`).
    """

    GATES = ("i", "f", "o", "c")

    def __init__(self, d: int, h: int = 8, seed: int = 0, imputer: Optional[Callable] = None):
        self.d, self.h, self.seed = d, h, seed
        self.imputer = imputer
        rng = np.random.default_rng(seed)
        lim = 1.0 / np.sqrt(d + h)
        self.params = {}
        for g in self.GATES:
            self.params[f"W_{g}"] = Tensor(rng.uniform(-lim, lim, (d + h, h)), requires_grad=True)
            self.params[f"b_{g}"] = Tensor(np.zeros((1, h)), requires_grad=True)
        self.params["W_y"] = Tensor(rng.uniform(-1 / np.sqrt(h), 1 / np.sqrt(h), (h, d)), requires_grad=True)
        self.params["b_y"] = Tensor(np.zeros((1, d)), requires_grad=True)
        self._cache = {}

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def prepare_inputs(self, data, m, graph):
        if self.imputer is None:
            return data
        key = (id(data), np.asarray(m).tobytes())
        if key not in self._cache:
            self._cache[key] = self.imputer(data, m, graph)
        return self._cache[key]

    def cell(self, x: Tensor, h: Tensor, c: Tensor, return_gates=False):
        p = self.params
        xh = tn.concat(x, h)
        gate = {g: tn.add_row(tn.matmul(xh, p[f"W_{g}"]), p[f"b_{g}"]) for g in self.GATES}
        i, f, o = tn.sigmoid(gate["i"]), tn.sigmoid(gate["f"]), tn.sigmoid(gate["o"])
        cand = tn.tanh(gate["c"])
        c = tn.add(tn.mul(f, c), tn.mul(i, cand))
        h = tn.mul(o, tn.tanh(c))
        if return_gates:
            return h, c, (i, f, o, cand)
        return h, c

    def forward_sequence(self, X, m=None, graph=None, L=None, training=False, rng=None) -> list:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != self.d:
            raise tn.ShapeError(f"expected (W, n, {self.d}) input, got {X.shape}")
        rows = X.shape[1]
        h = Tensor(np.zeros((rows, self.h)))
        c = Tensor(np.zeros((rows, self.h)))
        out = []
        for t in range(X.shape[0]):
            h, c = self.cell(Tensor(X[t]), h, c)
            out.append(tn.add_row(tn.matmul(h, self.params["W_y"]), self.params["b_y"]))
        return out

    def predict(self, X, m=None, graph=None, L=None) -> np.ndarray:
        with tn.no_grad():
            steps = self.forward_sequence(X)
        return np.stack([s.data for s in steps])


def lstm_forecast(series, model: LstmForecaster) -> np.ndarray:
    """Run a (trained) LSTM over ``(W, n, d)`` series; step w predicts w + horizon."""
    return model.predict(series)


def impute_then_forecast(method: str, data, graph: SensorGraph, partition: NodePartition,
                         config: TrainConfig, time_split: Optional[TimeSplit] = None,
                         gpr_config: GprConfig = GprConfig()):
    """Impute with kNN or GPR, train an LSTM under the masked-node protocol,
    and score it on the test nodes. Returns ``(val_mse, test_mse, report)``."""
    model = LstmForecaster(data.shape[2], config.hidden, config.seed, make_imputer(method, gpr_config))
    model, report = train(model, data, graph, partition, config, time_split)
    test = evaluate(model, data, graph, partition, config.horizon, "test", time_split)
    report.test_mse = test
    return report.best_val_mse, test, report
