"""Minimal numerical core: layers with hand-written backprop, Adam with
plateau scheduling, checkpoints, and swappable convolution kernels."""
from .adam import Adam, PlateauScheduler, TrainingDiverged
from .backend import backend_name
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    Conv2d,
    Dense,
    GRUCell,
    LEAKY_SLOPE,
    Param,
    glorot_uniform,
    leaky_relu,
    sigmoid,
)

__all__ = [
    "Adam", "PlateauScheduler", "TrainingDiverged", "backend_name",
    "load_checkpoint", "save_checkpoint", "Conv2d", "Dense", "GRUCell",
    "LEAKY_SLOPE", "Param", "glorot_uniform", "leaky_relu", "sigmoid",
]
