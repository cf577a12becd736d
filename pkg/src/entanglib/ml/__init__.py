"""Neural regressors, training loops and the hybrid measurement trainer."""

from .hybrid import HybridModel, HybridState, hybrid_loss_and_grad, hybrid_train
from .network import LayerSpec, NetworkModel, ShapeError, backward, cnn_build, fnn_build, forward
from .train import Adam, History, Metrics, TrainConfig, TrainingError, evaluate, train

__all__ = [
    "Adam",
    "History",
    "HybridModel",
    "HybridState",
    "LayerSpec",
    "Metrics",
    "NetworkModel",
    "ShapeError",
    "TrainConfig",
    "TrainingError",
    "backward",
    "cnn_build",
    "evaluate",
    "fnn_build",
    "forward",
    "hybrid_loss_and_grad",
    "hybrid_train",
    "train",
]
