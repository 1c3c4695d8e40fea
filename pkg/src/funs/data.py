"""Synthetic road-network datasets, CSV ingestion and z-scoring.

The generator builds a perturbed grid road graph, assigns every node a
road type plus length and speed-limit labels, and simulates a latent
congestion field: a persistent autoregressive process driven by
spatially smoothed innovations, plus a diffusion step along edges whose
rate depends on road type. Observed density adds a daily cycle whose
phase, amplitude and level depend on road type; observed speed falls
with density around a level set by the speed limit. Road types therefore
carry real information about a node's state.

CSV layout (comma separated, UTF-8, one header row):

* ``values.csv``: T rows, ``n*d`` columns named ``<feature>:<node>``,
  grouped feature-major (all nodes of feature 0, then feature 1, ...).
* ``coords.csv``: n rows, columns ``x,y``.
* ``labels.csv`` (optional): n rows, one column per label.
* ``edges.csv`` (optional): columns ``src,dst``; when absent the graph is
  built by thresholding pairwise coordinate distances at ``delta``.
* ``meta.json``: seed, config and provenance.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .graph import SensorGraph, TimeSplit, threshold_graph

log = logging.getLogger(__name__)

ROAD_TYPES = ("motorway", "primary", "residential", "service")


@dataclass
class SyntheticConfig:
    n_nodes: int = 150
    T: int = 294
    d: int = 2
    road_types: int = 3
    diffusion: float = 0.3
    amplitude: float = 0.5
    noise: float = 1.0
    seed: int = 0
    persistence: float = 0.98
    obs_noise: float = 0.15
    edge_drop: float = 0.25
    type_contrast: float = 0.6
    smoothing_steps: int = 6
    speed_weight: float = 1.0
    period: int = 288
    burn_in: int = 200
    max_retries: int = 50

    def __post_init__(self):
        if self.n_nodes < 4:
            raise ValueError("n_nodes must be >= 4")
        if self.T < 50:
            raise ValueError("T must be >= 50")
        if not 0.0 < self.diffusion < 1.0:
            raise ValueError("diffusion must lie in (0, 1)")
        if not 1 <= self.road_types <= len(ROAD_TYPES):
            raise ValueError(f"road_types must lie in [1, {len(ROAD_TYPES)}]")
        if not 0.0 <= self.edge_drop < 1.0:
            raise ValueError("edge_drop must lie in [0, 1)")
        if not 0.0 <= self.persistence < 1.0:
            raise ValueError("persistence must lie in [0, 1)")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 (density) or 2 (density, speed)")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    floored: tuple = ()

    def forward(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x) * self.std + self.mean


@dataclass
class DatasetBundle:
    graph: SensorGraph
    values: np.ndarray  # (T, n, d)
    feature_names: tuple
    label_names: tuple
    stats: Optional[NormStats] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1] != self.graph.n:
            raise ValueError(f"values shape {self.values.shape} inconsistent with n={self.graph.n}")
        if len(self.feature_names) != self.values.shape[2]:
            raise ValueError("one feature name per feature column required")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]


# -- generator ----------------------------------------------------------------

def _grid_edges(n: int):
    rows = int(np.floor(np.sqrt(n / 1.5))) or 1
    cols = int(np.ceil(n / rows))
    pos = np.array([(i % cols, i // cols) for i in range(n)], dtype=np.float64)
    pairs = []
    for i in range(n):
        c, r = i % cols, i // cols
        if c + 1 < cols and i + 1 < n:
            pairs.append((i, i + 1))
        if i + cols < n:
            pairs.append((i, i + cols))
    return pos, np.array(pairs, dtype=np.int64)


def _connected(n, pairs) -> bool:
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, _ = connected_components(adj, directed=False)
    return k == 1


def _road_graph(cfg: SyntheticConfig, rng):
    pos, pairs = _grid_edges(cfg.n_nodes)
    for _ in range(cfg.max_retries):
        keep = rng.random(len(pairs)) >= cfg.edge_drop
        kept = pairs[keep]
        if _connected(cfg.n_nodes, kept):
            return pos, kept
    raise RuntimeError(f"no connected road graph after {cfg.max_retries} attempts")


def generate_synthetic(cfg: SyntheticConfig = None) -> DatasetBundle:
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(cfg.seed)
    n, K = cfg.n_nodes, cfg.road_types
    pos, pairs = _road_graph(cfg, rng)
    coords = pos + rng.uniform(-0.15, 0.15, pos.shape)

    rtype = rng.integers(0, K, n)
    onehot = np.eye(K)[rtype]
    length = rng.uniform(0.2, 1.0, n)
    limit_by_type = np.linspace(1.0, 0.3, K)
    speed_limit = limit_by_type[rtype] + rng.normal(0.0, 0.05, n)
    labels = np.column_stack([onehot, length, speed_limit])
    label_names = tuple(f"type_{ROAD_TYPES[k]}" for k in range(K)) + ("length", "speed_limit")
    graph = SensorGraph.from_undirected(n, pairs, labels=labels, coords=coords)

    # per-type dynamics
    frac = np.arange(K) / max(K - 1, 1)
    kappa = cfg.diffusion * (1.0 - 0.7 * frac)[rtype]
    phase = (np.pi * frac)[rtype]
    amp = (1.0 - 0.6 * frac)[rtype] * (0.8 + 0.4 * length)
    level = cfg.type_contrast * np.linspace(1.0, -1.0, K)[rtype]

    deg = np.array([len(x) for x in graph.in_neighbors], dtype=np.float64)
    A = coo_matrix((np.ones(len(graph.edges)), (graph.edges[:, 1], graph.edges[:, 0])), shape=(n, n)).tocsr()

    # innovations are smoothed over the graph so every spatial scale shares
    # the same temporal correlation
    step_op = np.eye(n) + 0.5 * (A.toarray() / deg[:, None] - np.eye(n))
    smooth = np.linalg.matrix_power(step_op, cfg.smoothing_steps)
    smooth /= np.sqrt((smooth ** 2).sum(axis=1)).mean()
    innov = cfg.noise * np.sqrt(1.0 - cfg.persistence ** 2)

    u = np.zeros(n)
    latent = np.empty((cfg.T, n))
    for t in range(-cfg.burn_in, cfg.T):
        u = u + kappa * ((A @ u) / deg - u)
        u = cfg.persistence * u + innov * (smooth @ rng.standard_normal(n))
        if t >= 0:
            latent[t] = u

    steps = np.arange(cfg.T)[:, None]
    cycle = np.sin(2 * np.pi * steps / cfg.period + phase[None, :])
    density = level[None, :] + cfg.amplitude * amp[None, :] * cycle + latent
    density = density + cfg.obs_noise * rng.standard_normal(density.shape)
    feats = [density]
    names = ["density"]
    if cfg.d == 2:
        speed = cfg.speed_weight * speed_limit[None, :] - 0.6 * density
        speed = speed + cfg.obs_noise * rng.standard_normal(speed.shape)
        feats.append(speed)
        names.append("speed")
    values = np.stack(feats, axis=2)
    meta = {"source": "synthetic", "config": asdict(cfg), "seed": cfg.seed}
    return DatasetBundle(graph, values, tuple(names), label_names, None, meta)


# -- normalization ------------------------------------------------------------

def zscore(bundle: DatasetBundle, time_split: Optional[TimeSplit] = None, observed=None):
    """Standardize each feature with statistics from the training range
    (``[0, P)``, or everything without a split) at the observed nodes."""
    end = bundle.T if time_split is None else time_split.P
    nodes = np.arange(bundle.n) if observed is None else np.asarray(sorted(observed), dtype=np.int64)
    if end <= 0 or len(nodes) == 0:
        raise ValueError("training range is empty")
    ref = bundle.values[:end][:, nodes, :].reshape(-1, bundle.d)
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    floored = tuple(int(k) for k in np.nonzero(std < 1e-8)[0])
    if floored:
        log.warning("zero-variance features %s floored to 1e-8", floored)
    std = np.maximum(std, 1e-8)
    stats = NormStats(mean, std, floored)
    meta = dict(bundle.metadata, normalized=True, floored_features=list(floored))
    return replace(bundle, values=stats.forward(bundle.values), stats=stats, metadata=meta), stats


# -- CSV ----------------------------------------------------------------------

def _read_table(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    out = np.empty((len(body), len(header)))
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell {cell!r} at row {r + 2}, column {c + 1}") from None
    return header, out


def _write_table(path, header, arr, fmt="%.17g"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(arr):
            w.writerow([fmt % x for x in row])


def write_csv_dataset(bundle: DatasetBundle, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    T, n, d = bundle.values.shape
    header = [f"{f}:{i}" for f in bundle.feature_names for i in range(n)]
    flat = bundle.values.transpose(0, 2, 1).reshape(T, d * n)
    _write_table(out / "values.csv", header, flat)
    if bundle.graph.coords is not None:
        _write_table(out / "coords.csv", ["x", "y"], bundle.graph.coords)
    _write_table(out / "labels.csv", list(bundle.label_names), bundle.graph.labels)
    _write_table(out / "edges.csv", ["src", "dst"], bundle.graph.edges, fmt="%d")
    meta = dict(bundle.metadata)
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return out


def load_csv_dataset(values_path, coords_path, labels_path=None, delta=None, edges_path=None) -> DatasetBundle:
    header, flat = _read_table(values_path)
    _, coords = _read_table(coords_path)
    n = coords.shape[0]
    if coords.shape[1] != 2:
        raise ValueError(f"{coords_path} must have two columns (x, y)")
    if n < 4:
        raise ValueError(f"need at least 4 nodes, got {n}")
    if flat.shape[1] % n:
        raise ValueError(f"values has {flat.shape[1]} columns, not a multiple of n={n}")
    d = flat.shape[1] // n
    names = []
    for k in range(d):
        name = header[k * n].rsplit(":", 1)[0]
        names.append(name)
    values = flat.reshape(flat.shape[0], d, n).transpose(0, 2, 1).copy()

    if labels_path is not None and Path(labels_path).exists():
        label_names, labels = _read_table(labels_path)
        if labels.shape[0] != n:
            raise ValueError(f"labels has {labels.shape[0]} rows, coords has {n}")
    else:
        label_names, labels = ["ones"], np.ones((n, 1))

    if edges_path is not None:
        _, e = _read_table(edges_path)
        edges = e.astype(np.int64)
        source = {"edges": str(edges_path)}
    else:
        if delta is None:
            raise ValueError("delta is required when no edge file is given")
        edges, _ = threshold_graph(coords, delta)
        source = {"delta": delta}
    graph = SensorGraph(n, edges, labels, coords)
    meta = {"source": "csv", "values": str(values_path), **source}
    return DatasetBundle(graph, values, tuple(names), tuple(label_names), None, meta)


def load_csv_directory(directory, delta=None) -> DatasetBundle:
    """Load a directory written by :func:`write_csv_dataset`."""
    d = Path(directory)
    edges = d / "edges.csv"
    bundle = load_csv_dataset(d / "values.csv", d / "coords.csv", d / "labels.csv",
                              delta=delta, edges_path=edges if edges.exists() and delta is None else None)
    meta_file = d / "meta.json"
    if meta_file.exists():
        bundle.metadata = {**json.loads(meta_file.read_text(encoding="utf-8")), **bundle.metadata}
    return bundle
