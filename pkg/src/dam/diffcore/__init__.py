"""Minimal reverse-mode differentiable tensor engine.

Exactly the primitives the episodic pipeline needs: conv2d, pooling,
batch norm, linear maps, activations, reductions and a stabilized
softmax cross-entropy, all in channel-last layout.
"""

from . import kernels, ops
from .ops import (
    activation,
    add,
    batch_norm,
    concat,
    conv2d,
    div,
    exp,
    global_avg_pool,
    index_select,
    linear,
    log,
    logsumexp,
    matmul,
    maxpool2x2,
    mean,
    mul,
    narrow,
    neg,
    pool,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    softplus,
    sqrt,
    square,
    sub,
    sum_,
    transpose2d,
)
from .tensor import DEFAULT_DTYPE, ShapeError, Tape, Tensor, active_tape

__all__ = [
    "DEFAULT_DTYPE",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "kernels",
    "ops",
    "activation",
    "add",
    "batch_norm",
    "concat",
    "conv2d",
    "div",
    "exp",
    "global_avg_pool",
    "index_select",
    "linear",
    "log",
    "logsumexp",
    "matmul",
    "maxpool2x2",
    "mean",
    "mul",
    "narrow",
    "neg",
    "pool",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "softplus",
    "sqrt",
    "square",
    "sub",
    "sum_",
    "transpose2d",
]
