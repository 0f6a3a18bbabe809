"""Graph-transformer bag classification with a self-contained autodiff core."""

from .data import BagDataset, BagRecord, SynthSpec, generate_dataset, read_dataset, write_dataset
from .graph import CsrAdjacency, GraphConfig, WsiGraph, build_graph, knn_adjacency, permute_graph
from .harness import RunRecord, TrainConfig, ablate, evaluate_checkpoint, train
from .metrics import EvalReport, accuracy, auroc_binary, auroc_macro
from .model import IgtModel
from .optim import LrSchedule, RAdam, lr_at
from .tensor import Tensor, backward, no_grad

__all__ = [
    "BagDataset", "BagRecord", "SynthSpec", "generate_dataset", "read_dataset", "write_dataset",
    "CsrAdjacency", "GraphConfig", "WsiGraph", "build_graph", "knn_adjacency", "permute_graph",
    "RunRecord", "TrainConfig", "ablate", "evaluate_checkpoint", "train",
    "EvalReport", "accuracy", "auroc_binary", "auroc_macro",
    "IgtModel", "LrSchedule", "RAdam", "lr_at",
    "Tensor", "backward", "no_grad",
]
