"""Feedforward ReLU networks: forward pass, gradients, Adam training."""

from .mlp import Mlp, forward, init_params, param_layout
from .train import (
    Dataset,
    FitConfig,
    NumericError,
    TrainReport,
    batch_loss,
    derive_seed,
    fit,
    grad,
)
from .backend import backend_name, have_fastpath

__all__ = [
    "Mlp",
    "forward",
    "init_params",
    "param_layout",
    "Dataset",
    "FitConfig",
    "TrainReport",
    "NumericError",
    "fit",
    "grad",
    "batch_loss",
    "derive_seed",
    "backend_name",
    "have_fastpath",
]
