"""Single-head attention message passing (GATv2-style scoring).

For node ``i`` with augmented in-neighborhood ``N_i + {i}``::

    e_ji = a . leaky_relu(h_j W_src + h_i W_dst)
    c_ji = softmax_j(e_ji)
    out_i = sum_j c_ji (h_j W_src) + b

Self-loops are added here rather than stored in the graph, so isolated
nodes still receive their own message.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .graph import SensorGraph
from .tensor import Tensor


class GraphIndex:
    """Edge index with self-loops, sorted by destination, plus the
    gather/scatter plans used by the layer."""

    def __init__(self, n: int, edges: np.ndarray):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        loops = np.arange(n)
        src = np.concatenate([edges[:, 0], loops])
        dst = np.concatenate([edges[:, 1], loops])
        order = np.lexsort((src, dst))
        self.n = n
        self.src = src[order]
        self.dst = dst[order]
        self.starts = np.searchsorted(self.dst, np.arange(n))
        by_src = np.argsort(self.src, kind="stable")
        self.src_plan = (by_src, np.searchsorted(self.src[by_src], np.arange(n)))
        self.dst_plan = (np.arange(len(self.dst)), self.starts)

    @classmethod
    def from_graph(cls, graph: SensorGraph) -> "GraphIndex":
        return cls(graph.n, graph.edges)

    def batched(self, copies: int) -> "GraphIndex":
        """Disjoint union of ``copies`` replicas (block-diagonal graph)."""
        base = np.stack([self.src, self.dst], axis=1)
        base = base[self.src != self.dst]
        blocks = [base + k * self.n for k in range(copies)]
        return GraphIndex(self.n * copies, np.vstack(blocks))

    @property
    def num_messages(self) -> int:
        return len(self.src)


def as_index(graph) -> GraphIndex:
    if isinstance(graph, GraphIndex):
        return graph
    cached = getattr(graph, "_funs_index", None)
    if cached is None:
        cached = GraphIndex.from_graph(graph)
        object.__setattr__(graph, "_funs_index", cached)
    return cached


@dataclass
class AttentionLayer:
    W_src: Tensor
    W_dst: Tensor
    a: Tensor  # (d_out, 1)
    b: Tensor  # (1, d_out)
    slope: float = 0.2

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, slope: float = 0.2) -> "AttentionLayer":
        if d_out <= 0:
            raise ValueError("d_out must be positive")
        lim = 1.0 / np.sqrt(d_in)
        return cls(
            W_src=Tensor(rng.uniform(-lim, lim, (d_in, d_out)), requires_grad=True),
            W_dst=Tensor(rng.uniform(-lim, lim, (d_in, d_out)), requires_grad=True),
            a=Tensor(rng.uniform(-1 / np.sqrt(d_out), 1 / np.sqrt(d_out), (d_out, 1)), requires_grad=True),
            b=Tensor(np.zeros((1, d_out)), requires_grad=True),
            slope=slope,
        )

    @property
    def d_in(self) -> int:
        return self.W_src.rows

    @property
    def d_out(self) -> int:
        return self.W_src.cols

    def named_params(self) -> dict:
        return {"W_src": self.W_src, "W_dst": self.W_dst, "a": self.a, "b": self.b}


def _scores(H: Tensor, idx: GraphIndex, layer: AttentionLayer):
    if H.rows != idx.n:
        raise tn.ShapeError(f"node states have {H.rows} rows, graph has {idx.n} nodes")
    if H.cols != layer.d_in:
        raise tn.ShapeError(f"node states have width {H.cols}, layer expects {layer.d_in}")
    hs = tn.matmul(H, layer.W_src)
    hd = tn.matmul(H, layer.W_dst)
    msg = tn.gather_rows(hs, idx.src, idx.src_plan)
    z = tn.leaky_relu(tn.add(msg, tn.gather_rows(hd, idx.dst, idx.dst_plan)), layer.slope)
    coef = tn.segment_softmax(tn.matmul(z, layer.a), idx.starts, idx.dst)
    return coef, msg


def attention_scores(H, graph, layer: AttentionLayer):
    """Normalized coefficients per message.

    Returns ``(src, dst, coef)`` arrays including one self-loop per node;
    for every destination the coefficients sum to one.
    """
    idx = as_index(graph)
    with tn.no_grad():
        coef, _ = _scores(tn.as_tensor(H), idx, layer)
    return idx.src.copy(), idx.dst.copy(), coef.data[:, 0].copy()


def mpnn_forward(H, graph, layer: AttentionLayer) -> Tensor:
    idx = as_index(graph)
    coef, msg = _scores(tn.as_tensor(H), idx, layer)
    agg = tn.segment_sum(tn.mul_col(msg, coef), idx.starts, idx.dst)
    return tn.add_row(agg, layer.b)
