"""Estimating the state of unobserved road-network nodes with a
graph-gated recurrent network (FUNS-N), plus baselines and an experiment
runner. Built on numpy/scipy with a small reverse-mode autodiff core."""
from .data import DatasetBundle, SyntheticConfig, generate_synthetic, load_csv_dataset, zscore
from .graph import NodePartition, SensorGraph, TimeSplit, build_mask, split_nodes
from .model import FunsNet
from .training import TrainConfig, TrainReport, evaluate, train

__all__ = [
    "DatasetBundle", "SyntheticConfig", "generate_synthetic", "load_csv_dataset", "zscore",
    "NodePartition", "SensorGraph", "TimeSplit", "build_mask", "split_nodes",
    "FunsNet", "TrainConfig", "TrainReport", "evaluate", "train",
]
__version__ = "0.1.0"
