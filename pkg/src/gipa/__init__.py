"""Edge-aware graph attention (bit-wise and feature-wise) with a wide & deep head."""

from .errors import (ConfigError, ContractError, DivergenceError, GipaError, IngestionError,
                     ShapeError, UndefinedAUCError)
from .graph import Graph, build_graph
from .model import GipaModel, ModelSpec, init_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, roc_auc, train

__all__ = [
    "ConfigError", "ContractError", "DivergenceError", "GipaError", "IngestionError", "ShapeError",
    "UndefinedAUCError", "Graph", "build_graph", "GipaModel", "ModelSpec", "init_model",
    "load_checkpoint", "save_checkpoint", "TrainConfig", "evaluate", "roc_auc", "train",
]
__version__ = "0.1.0"
