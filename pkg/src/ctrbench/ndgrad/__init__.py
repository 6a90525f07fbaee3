"""Minimal dense-tensor engine: reverse-mode autodiff plus Adam."""

from ctrbench.ndgrad.gradcheck import GradCheckReport, grad_check, relative_error
from ctrbench.ndgrad.optim import (
    Adam,
    AdamState,
    Parameter,
    adam_step,
    normal_init,
    zeros_init,
)
from ctrbench.ndgrad.tensor import (
    DEFAULT_DTYPE,
    OP_KINDS,
    BatchNormState,
    Tape,
    Tensor,
    active_tape,
    add,
    backward,
    batch_norm,
    concat,
    dropout,
    elementwise_mul,
    embedding_lookup,
    matmul,
    mean_reduce,
    op_forward,
    relu,
    reshape,
    scalar_mul,
    sigmoid,
    slice_tensor,
    softmax,
    softplus,
    sqrt_safe,
    square,
    sub,
    sum_reduce,
    transpose,
)

__all__ = [
    "DEFAULT_DTYPE", "OP_KINDS", "Adam", "AdamState", "BatchNormState",
    "GradCheckReport", "Parameter", "Tape", "Tensor", "active_tape",
    "adam_step", "add", "backward", "batch_norm", "concat", "dropout",
    "elementwise_mul", "embedding_lookup", "grad_check", "matmul",
    "mean_reduce", "normal_init", "op_forward", "relative_error", "relu",
    "reshape", "scalar_mul", "sigmoid", "slice_tensor", "softmax",
    "softplus", "sqrt_safe", "square", "sub", "sum_reduce", "transpose",
    "zeros_init",
]
