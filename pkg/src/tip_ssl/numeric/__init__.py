"""Minimal dense tensor library with reverse-mode autodiff, Adam and LR schedule."""

from . import ops
from .gradcheck import GradCheckResult, check_gradients, numeric_grad, relative_error
from .ops import (
    LARGE,
    concat,
    cross_entropy_from_logits,
    gather_rows,
    gelu,
    getitem,
    layer_norm,
    log_softmax,
    matmul,
    mean,
    mse,
    softmax_rows,
    transpose,
)
from .optim import OptimizerState, adam_step, clip_grad_norm, lr_at
from .tensor import (
    DegenerateMaskError,
    GradStateError,
    NumericError,
    Tape,
    Tensor,
    backward,
    precision,
    zero_grad,
)

__all__ = [
    "LARGE",
    "DegenerateMaskError",
    "GradCheckResult",
    "GradStateError",
    "NumericError",
    "OptimizerState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "check_gradients",
    "clip_grad_norm",
    "concat",
    "cross_entropy_from_logits",
    "gather_rows",
    "gelu",
    "getitem",
    "layer_norm",
    "log_softmax",
    "lr_at",
    "matmul",
    "mean",
    "mse",
    "numeric_grad",
    "ops",
    "precision",
    "relative_error",
    "softmax_rows",
    "transpose",
    "zero_grad",
]
