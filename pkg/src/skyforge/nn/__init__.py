"""Minimal network layer set, optimizer, gradient oracle, and checkpointing.

Tensors are torch CPU tensors (float32 values, ``.grad`` as the gradient
buffer); layer parameters are initialized from numpy RNG streams so a network
is a pure function of (layer specs, seed).
"""

from .layers import (
    Conv2d,
    Elu,
    Flatten,
    FullyConnected,
    GlobalAveragePool,
    NearestUpsample,
    Network,
    Relu,
    Reshape,
    ResidualBlock,
    spec_from_dict,
    spec_to_dict,
)
from .optim import AdamState, adam_step, plateau_schedule
from .gradcheck import grad_check
from .normalize import Normalizer, fit_normalizer
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Conv2d", "Elu", "Flatten", "FullyConnected", "GlobalAveragePool",
    "NearestUpsample", "Network", "Relu", "Reshape", "ResidualBlock",
    "spec_from_dict", "spec_to_dict",
    "AdamState", "adam_step", "plateau_schedule",
    "grad_check", "Normalizer", "fit_normalizer",
    "load_checkpoint", "save_checkpoint",
]
