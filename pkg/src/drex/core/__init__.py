"""Dense float64 math: tape-based reverse mode, Adam, gradient checking."""

from .adam import AdamState, TrainingError, adam_step
from .gradcheck import finite_diff_gradcheck
from .tape import (
    ContractError,
    Node,
    ShapeError,
    Tape,
    backward,
    elementwise,
    project,
    sigmoid_values,
    softmax,
    softmax_values,
)

__all__ = [
    "AdamState",
    "ContractError",
    "Node",
    "ShapeError",
    "Tape",
    "TrainingError",
    "adam_step",
    "backward",
    "elementwise",
    "finite_diff_gradcheck",
    "project",
    "sigmoid_values",
    "softmax",
    "softmax_values",
]
