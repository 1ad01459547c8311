"""Multi-view clustering with hierarchical fusion and neighbour-relaxed contrastive learning."""

from .akcl import NeighborGraph, akcl_loss, build_graph, knn_adjacency, total_loss
from .cluster import MetricReport, accuracy, kmeans, nmi, purity
from .data import MultiViewDataset, load_dataset, make_synthetic, min_max_normalize, save_dataset
from .dshf import DshfNetwork, concat_fallback, dshf_forward
from .errors import ConfigError, ContractError, DimensionError, DivergenceError, LoadError
from .tensor import Tensor, no_grad
from .trainer import RunConfig, RunLog, evaluate, finetune, pretrain, run, sweep

__all__ = [
    "NeighborGraph", "akcl_loss", "build_graph", "knn_adjacency", "total_loss",
    "MetricReport", "accuracy", "kmeans", "nmi", "purity",
    "MultiViewDataset", "load_dataset", "make_synthetic", "min_max_normalize", "save_dataset",
    "DshfNetwork", "concat_fallback", "dshf_forward",
    "ConfigError", "ContractError", "DimensionError", "DivergenceError", "LoadError",
    "Tensor", "no_grad",
    "RunConfig", "RunLog", "evaluate", "finetune", "pretrain", "run", "sweep",
]
