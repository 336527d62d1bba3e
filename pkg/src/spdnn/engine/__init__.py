"""Minimal deterministic tensor engine for merged network DAGs.

The convolution kernels have a compiled core (built from the Cython source
in this package) and a numpy fallback; see :mod:`spdnn.engine.kernels`.
"""

from . import kernels, ops
from .checkpoint import (
    CheckpointError,
    CheckpointMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .gradcheck import grad_check
from .network import NumericError, ParameterStore, run_backward, run_forward
from .ops import EngineError, bce_loss
from .optim import nesterov_step
from .train import TrainConfig, evaluate_loss, loss_csv_text, train_network

__all__ = [
    "CheckpointError",
    "CheckpointMismatchError",
    "EngineError",
    "NumericError",
    "ParameterStore",
    "TrainConfig",
    "bce_loss",
    "evaluate_loss",
    "grad_check",
    "kernels",
    "load_checkpoint",
    "loss_csv_text",
    "nesterov_step",
    "ops",
    "run_backward",
    "run_forward",
    "save_checkpoint",
    "train_network",
]
