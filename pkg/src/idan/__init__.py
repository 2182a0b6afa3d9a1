"""Desk-scale IDAN change detection: numpy autodiff, prior maps, U-net with FDA/EC modules."""

from .model import IDANModel, UNetConfig, flop_count, idan_forward
from .tensor import Tensor, check_mode, no_grad
from .training import TrainConfig, bcd_loss, evaluate, metrics, train

__version__ = "0.1.0"

__all__ = [
    "IDANModel",
    "Tensor",
    "TrainConfig",
    "UNetConfig",
    "bcd_loss",
    "check_mode",
    "evaluate",
    "flop_count",
    "idan_forward",
    "metrics",
    "no_grad",
    "train",
]
