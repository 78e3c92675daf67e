"""Reverse-mode differentiation over numpy arrays, plus Adam and checkpoints."""
from .gradcheck import GradCheckReport, gradcheck
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ops import (
    add,
    add_rowvec,
    concat_lastdim,
    expand_neighbors,
    gather_rows,
    l2norm_rows,
    leaky_relu,
    matmul,
    matmul_reduce_max,
    mse,
    neighbor_sum,
    reduce_max,
    relu,
    scalar_mul,
    slice_rows,
    sub,
    total,
)
from .optim import AdamState, adam_step
from .tensor import NonFiniteError, ShapeError, Tape, Tensor, backward

__all__ = [
    "AdamState", "CheckpointError", "GradCheckReport", "gradcheck", "NonFiniteError", "ShapeError", "Tape", "Tensor",
    "adam_step", "add", "add_rowvec", "backward", "concat_lastdim", "expand_neighbors",
    "gather_rows", "l2norm_rows", "leaky_relu", "load_checkpoint", "matmul", "matmul_reduce_max", "mse",
    "neighbor_sum", "reduce_max", "relu", "save_checkpoint", "scalar_mul", "slice_rows",
    "sub", "total",
]
