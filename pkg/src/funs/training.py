"""Masked-node training and evaluation protocol.

Training hides ``v_opt`` from the inputs (only ``v_in`` is fed) but scores
predictions on every observed node. Evaluation feeds all observed nodes
over the whole prefix of the sequence and scores only the validation or
test nodes, so those nodes' stored values are never read as inputs.

Models plugged into :func:`train` provide ``parameters()``,
``forward_sequence(X, m, graph, L, training, rng)`` returning one ``(n, d)``
tensor per step, ``predict(X, m, graph, L)``, ``state_dict()`` /
``load_state_dict()``, and optionally ``prepare_inputs(data, m, graph)``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tn
from .graph import NodePartition, SensorGraph, TimeSplit, build_mask
from .mpnn import as_index

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    horizon: int = 0
    window_len: int = 24
    epochs: int = 100
    windows_per_epoch: int = 8
    batch_windows: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.25
    hidden: int = 8
    seed: int = 0
    patience: int = 20
    val_every: int = 1
    max_seconds: Optional[float] = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_mse
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    test_mse: Optional[float] = None
    stopped_early: bool = False
    budget_exhausted: bool = False

    def to_jsonl(self) -> str:
        lines = [json.dumps(rec, sort_keys=True) for rec in self.epochs]
        summary = {k: v for k, v in asdict(self).items() if k != "epochs"}
        lines.append(json.dumps({"summary": summary}, sort_keys=True))
        return "\n".join(lines) + "\n"


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        tn.zero_grad(self.params)


def sample_window(train_len: int, window_len: int, horizon: int, rng) -> tuple:
    """Draw ``(V, W)`` with ``W = V + window_len`` and targets inside the
    training range, i.e. ``W + horizon <= train_len``."""
    last = train_len - window_len - horizon
    if last < 0:
        raise ValueError(
            f"window of {window_len} steps plus horizon {horizon} exceeds training length {train_len}"
        )
    V = int(rng.integers(0, last + 1))
    return V, V + window_len


def _node_rows(mask: np.ndarray, d: int) -> np.ndarray:
    return (np.asarray(mask) > 0)[:, None].repeat(d, axis=1)


def training_loss(pred, target: np.ndarray, observed_mask: np.ndarray) -> tn.Tensor:
    """Mean squared error over all steps, observed nodes and features.

    ``pred`` is a list of ``(n, d)`` tensors (one per step) or a stacked
    ``(W*n, d)`` tensor. Targets at unobserved nodes are never read, so
    they may hold anything, NaN included.
    """
    target = np.asarray(target, dtype=np.float64)
    W, n, d = target.shape
    if isinstance(pred, (list, tuple)):
        pred = tn.stack_rows(pred)
    if pred.shape != (W * n, d):
        raise tn.ShapeError(f"prediction shape {pred.shape} does not match target {target.shape}")
    keep = np.tile(_node_rows(observed_mask, d), (W, 1))
    count = keep.sum()
    if count == 0:
        raise ValueError("no observed nodes to score")
    y = np.where(keep, target.reshape(W * n, d), 0.0)
    diff = tn.mul(tn.sub(pred, tn.Tensor(y)), tn.Tensor(keep.astype(np.float64)))
    return tn.scale(tn.sum_all(tn.mul(diff, diff)), 1.0 / count)


def test_loss(pred: np.ndarray, target: np.ndarray, eval_mask: np.ndarray) -> float:
    """MSE over the nodes selected by ``eval_mask`` (all steps, features)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    sel = np.asarray(eval_mask) > 0
    if not sel.any():
        raise ValueError("evaluation set is empty")
    diff = pred[:, sel, :] - target[:, sel, :]
    return float(np.mean(diff * diff))


def _prepare(model, data, mask, graph):
    fn = getattr(model, "prepare_inputs", None)
    return data if fn is None else fn(data, mask, graph)


def eval_ranges(T: int, horizon: int, time_split: Optional[TimeSplit], split: str) -> tuple:
    """Return ``(prefix_end, start, stop)``: run the model over
    ``[0, prefix_end)`` and score predictions emitted at ``[start, stop)``
    against targets ``horizon`` steps later."""
    if time_split is None:
        return T, 0, T - horizon
    if split == "val":
        return time_split.Q, time_split.P, time_split.Q - horizon
    if split == "test":
        return T, time_split.Q, T - horizon
    raise ValueError(f"unknown split {split!r}")


def evaluate(model, data, graph: SensorGraph, partition: NodePartition, horizon: int, split: str = "test",
             time_split: Optional[TimeSplit] = None, input_nodes=None) -> float:
    """Score ``model`` on ``partition.v_val`` or ``partition.v_test``.

    All observed nodes (or ``input_nodes`` when given) are fed unmasked
    over the whole prefix; only the chosen split's nodes are scored.
    """
    nodes = partition.v_val if split == "val" else partition.v_test
    if len(nodes) == 0:
        raise ValueError(f"{split} split is empty")
    T, n, _ = data.shape
    feed = partition.observed if input_nodes is None else input_nodes
    m = build_mask(feed, n)
    end, start, stop = eval_ranges(T, horizon, time_split, split)
    if stop <= start:
        raise ValueError(f"horizon {horizon} leaves no {split} steps to score")
    inputs = _prepare(model, data, m, graph)
    pred = model.predict(inputs[:end], m, graph, graph.labels)
    return test_loss(pred[start:stop], data[start + horizon:stop + horizon], build_mask(nodes, n))


def train(model, data, graph: SensorGraph, partition: NodePartition, config: TrainConfig,
          time_split: Optional[TimeSplit] = None, input_nodes=None, loss_nodes=None):
    """Optimize ``model`` with masked-node BPTT; returns ``(model, report)``.

    ``input_nodes`` / ``loss_nodes`` default to ``v_in`` and all observed
    nodes. The parameters of the best validation epoch are restored.
    """
    T, n, d = data.shape
    train_len = T if time_split is None else time_split.P
    m_in = build_mask(partition.v_in if input_nodes is None else input_nodes, n)
    m_loss = build_mask(partition.observed if loss_nodes is None else loss_nodes, n)
    eval_feed = None if input_nodes is None else tuple(sorted(set(input_nodes)))

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    inputs = _prepare(model, data, m_in, graph)
    B = max(1, min(config.batch_windows, config.windows_per_epoch))
    base_idx = as_index(graph)
    batched = {1: base_idx}

    report = TrainReport()
    best_state = model.state_dict()
    since_best = 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        losses = []
        remaining = config.windows_per_epoch
        while remaining > 0:
            b = min(B, remaining)
            remaining -= b
            spans = [sample_window(train_len, config.window_len, config.horizon, rng) for _ in range(b)]
            X = np.concatenate([inputs[V:W] for V, W in spans], axis=1)
            Y = np.concatenate(
                [data[V + config.horizon:W + config.horizon] for V, W in spans], axis=1)
            if b not in batched:
                batched[b] = base_idx.batched(b)
            opt.zero_grad()
            out = model.forward_sequence(X, np.tile(m_in, b), batched[b], np.tile(graph.labels, (b, 1)),
                                         training=True, rng=rng)
            loss = training_loss(out, Y, np.tile(m_loss, b))
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            tn.backward(loss)
            opt.step()
            losses.append(loss.item())
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mse": None}
        if epoch % config.val_every == 0 or epoch == config.epochs - 1:
            val = evaluate(model, data, graph, partition, config.horizon, "val", time_split, eval_feed)
            rec["val_mse"] = val
            if val < report.best_val_mse:
                report.best_val_mse, report.best_epoch = val, epoch
                best_state = model.state_dict()
                since_best = 0
            else:
                since_best += config.val_every
        report.epochs.append(rec)
        log.debug("epoch %d loss %.4f val %s", epoch, rec["train_loss"], rec["val_mse"])
        if since_best >= config.patience:
            report.stopped_early = True
            break
        if config.max_seconds is not None and time.perf_counter() - t0 > config.max_seconds:
            log.warning("training stopped by wall-time budget after epoch %d", epoch)
            report.budget_exhausted = True
            break
    model.load_state_dict(best_state)
    return model, report
