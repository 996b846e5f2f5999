"""1D-CNN distance / vertical-displacement regressor, built on numpy."""

from mqnav.regressor.layers import Conv1D, Dense, Dropout, Flatten, ReLU, conv1d_forward, relu
from mqnav.regressor.model import (
    Normalization,
    RegressorModel,
    backward,
    baseline_model,
    build,
    forward,
    mini_model,
    mse_loss,
)
from mqnav.regressor.oracle import oracle_regressor
from mqnav.regressor.serialize import load, save
from mqnav.regressor.training import TrainConfig, TrainHistory, WindowDataset, train

__all__ = [
    "Conv1D",
    "Dense",
    "Dropout",
    "Flatten",
    "Normalization",
    "ReLU",
    "RegressorModel",
    "TrainConfig",
    "TrainHistory",
    "WindowDataset",
    "backward",
    "baseline_model",
    "build",
    "conv1d_forward",
    "forward",
    "load",
    "mini_model",
    "mse_loss",
    "oracle_regressor",
    "relu",
    "save",
    "train",
]
