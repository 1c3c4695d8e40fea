"""Sensor graphs, node partitions, masks and feature-sequence helpers.

Edges are directed pairs ``(j, i)`` meaning information flows from node
``j`` to node ``i``; the in-neighborhood of ``i`` is ``{j : (j, i) in E}``.
Feature sequences are plain ``(T, n, d)`` float arrays.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SensorGraph:
    n: int
    edges: np.ndarray  # (E, 2) int array of (src, dst)
    labels: np.ndarray  # (n, z)
    coords: Optional[np.ndarray] = None  # (n, 2)
    in_neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise ValueError(f"edge endpoint outside [0, {self.n})")
        # self-connections are the message-passing layer's business
        edges = np.unique(edges[edges[:, 0] != edges[:, 1]], axis=0)
        labels = np.asarray(self.labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[0] != self.n:
            raise ValueError(f"labels must have {self.n} rows, got shape {labels.shape}")
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=np.float64)
            if coords.shape != (self.n, 2):
                raise ValueError(f"coords must be ({self.n}, 2), got {coords.shape}")
            object.__setattr__(self, "coords", coords)
        nbrs = [[] for _ in range(self.n)]
        for j, i in edges:
            nbrs[i].append(int(j))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "in_neighbors", tuple(tuple(x) for x in nbrs))

    @classmethod
    def from_undirected(cls, n, pairs, labels=None, coords=None) -> "SensorGraph":
        """Expand undirected pairs into both directions."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        both = np.vstack([pairs, pairs[:, ::-1]])
        both = np.unique(both, axis=0)
        if labels is None:
            labels = np.ones((n, 1))
        return cls(n, both, labels, coords)

    def with_labels(self, labels: np.ndarray) -> "SensorGraph":
        return SensorGraph(self.n, self.edges, labels, self.coords)

    @property
    def num_labels(self) -> int:
        return self.labels.shape[1]

    def edge_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.edges}


@dataclass(frozen=True)
class NodePartition:
    v_in: tuple
    v_opt: tuple
    v_val: tuple
    v_test: tuple

    def __post_init__(self):
        sets = [set(self.v_in), set(self.v_opt), set(self.v_val), set(self.v_test)]
        total = sum(len(s) for s in sets)
        if len(set().union(*sets)) != total:
            raise ValueError("partition subsets overlap")

    @property
    def observed(self) -> tuple:
        return tuple(sorted(self.v_in + self.v_opt))

    @property
    def unobserved(self) -> tuple:
        return tuple(sorted(self.v_val + self.v_test))

    def digest(self) -> str:
        """Short stable hash, used to confirm models share a partition."""
        text = "|".join(",".join(map(str, s)) for s in (self.v_in, self.v_opt, self.v_val, self.v_test))
        return hashlib.sha1(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class TimeSplit:
    P: int
    Q: int
    T: int

    def __post_init__(self):
        if not 0 < self.P < self.Q < self.T:
            raise ValueError(f"need 0 < P < Q < T, got P={self.P}, Q={self.Q}, T={self.T}")

    @classmethod
    def from_fractions(cls, T: int, train: float = 0.7, val: float = 0.85) -> "TimeSplit":
        return cls(int(round(train * T)), int(round(val * T)), T)


def build_mask(subset: Sequence[int], n: int) -> np.ndarray:
    m = np.zeros(n)
    idx = np.asarray(list(subset), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"node index outside [0, {n})")
    m[idx] = 1.0
    return m


def apply_mask(X: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Zero every node with m == 0, across time and features.

    Accepts (n, d) or (T, n, d). Masked entries are set to exactly zero,
    even when the stored values are not finite.
    """
    m = np.asarray(m)
    n_axis = X.ndim - 2
    if m.shape[0] != X.shape[n_axis]:
        raise ValueError(f"mask length {m.shape[0]} != node count {X.shape[n_axis]}")
    keep = (m > 0)[:, None]
    return np.where(keep, X, 0.0)


def split_nodes(n: int, observed_share: float, seed) -> NodePartition:
    if not 0.0 < observed_share < 1.0:
        raise ValueError(f"observed_share must lie in (0, 1), got {observed_share}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_obs = int(round(observed_share * n))
    observed, rest = perm[:n_obs], perm[n_obs:]
    n_in = len(observed) // 2
    n_val = len(rest) // 2
    parts = dict(
        v_in=observed[:n_in], v_opt=observed[n_in:], v_val=rest[:n_val], v_test=rest[n_val:],
    )
    for name, nodes in parts.items():
        if len(nodes) == 0:
            raise ValueError(f"share {observed_share} with n={n} leaves {name} empty")
    return NodePartition(**{k: tuple(sorted(int(x) for x in v)) for k, v in parts.items()})


def threshold_graph(coords: np.ndarray, delta: float):
    """Directed edges for every pair within euclidean distance ``delta``.

    Returns ``(edges, isolated)`` where ``isolated`` flags that no node has
    any neighbor at all.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if delta <= 0:
        raise ValueError("delta must be positive")
    if coords.shape[0] < 2:
        raise ValueError("need at least two nodes")
    dist = cdist(coords, coords)
    src, dst = np.nonzero((dist > 0) & (dist <= delta))
    edges = np.stack([src, dst], axis=1).astype(np.int64)
    isolated = len(edges) == 0
    if isolated:
        log.warning("threshold graph with delta=%g has no edges", delta)
    return edges, isolated
