"""Float64 tensor kernel with reverse-mode autodiff and linear-algebra helpers."""

from .container import ContainerError, load_tensors, save_tensors
from .gradcheck import GradCheckReport, grad_check
from .linalg import NotSPDError, cholesky, pca_reduce, pearson_columns, solve_spd
from .ops import (
    add,
    concat,
    conv3d,
    cross_entropy,
    div,
    embedding,
    exp,
    getitem,
    group_norm,
    layer_norm,
    log,
    masked_softmax,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sub,
    transpose,
)
from .ops import sum as tsum
from .tensor import NonFiniteError, Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "ContainerError", "GradCheckReport", "NonFiniteError", "NotSPDError", "Tape", "Tensor",
    "add", "as_tensor", "backward", "cholesky", "concat", "conv3d", "cross_entropy", "div",
    "embedding", "exp", "getitem", "grad_check", "group_norm", "is_grad_enabled", "layer_norm",
    "load_tensors", "log", "masked_softmax", "matmul", "mean", "mul", "neg", "no_grad",
    "pca_reduce", "pearson_columns", "relu", "reshape", "save_tensors", "solve_spd", "sub",
    "transpose", "tsum",
]
