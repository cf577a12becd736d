"""Configuration, persistence, experiment orchestration and the CLI."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, ReeTaskConfig, SamplingConfig, load_config
from .datasets import Dataset, DatasetError, LabelledStates, generate_states, make_dataset, read_dataset, write_dataset
from .experiments import Report, TrainedModel, evaluate_model, reproduce, train_model

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "ExperimentConfig",
    "LabelledStates",
    "ReeTaskConfig",
    "Report",
    "SamplingConfig",
    "TrainedModel",
    "evaluate_model",
    "generate_states",
    "load_checkpoint",
    "load_config",
    "make_dataset",
    "read_dataset",
    "reproduce",
    "save_checkpoint",
    "train_model",
    "write_dataset",
]
