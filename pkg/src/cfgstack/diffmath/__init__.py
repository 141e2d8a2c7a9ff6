"""Dense differentiable computation core: tape, ops, optimizer, checks."""

from .checkpoint import checkpoint_text, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import Adam
from .ops import (
    add,
    concat,
    cross_entropy,
    dropout,
    gather_rows,
    leaky_relu,
    linear,
    matmul,
    mean_rows,
    mse,
    mul,
    relu,
    reshape,
    scatter_rows,
    segment_softmax,
    slice_cols,
    softmax_rows,
    sum_all,
)
from .tensor import ParamStore, Tensor, const, leaf

__all__ = [
    "Adam",
    "ParamStore",
    "Tensor",
    "add",
    "checkpoint_text",
    "concat",
    "const",
    "cross_entropy",
    "dropout",
    "gather_rows",
    "grad_check",
    "leaf",
    "leaky_relu",
    "linear",
    "load_checkpoint",
    "matmul",
    "mean_rows",
    "mse",
    "mul",
    "relu",
    "reshape",
    "save_checkpoint",
    "scatter_rows",
    "segment_softmax",
    "slice_cols",
    "softmax_rows",
    "sum_all",
]
