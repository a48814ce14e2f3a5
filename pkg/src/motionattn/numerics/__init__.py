"""Self-contained numerics: tensors, reverse-mode gradients, Adam, archives."""

from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    absolute,
    add,
    as_tensor,
    concat,
    conv1d,
    div,
    exp,
    glorot_uniform,
    matmul,
    mul,
    parameter,
    relu,
    reshape,
    row_norms,
    sqrt,
    sub,
    take,
    tanh,
    tensor_mean,
    tensor_sum,
    transpose,
)
from .optim import AdamState, GradientError, adam_step, named_gradients
from .gradcheck import CoordinateRecord, GradCheckReport, finite_diff_check
from .archive import ArchiveError, load_archive, save_archive

__all__ = [
    "AdamState",
    "ArchiveError",
    "CoordinateRecord",
    "GradCheckReport",
    "GradientError",
    "ShapeError",
    "Tape",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "as_tensor",
    "concat",
    "conv1d",
    "div",
    "exp",
    "finite_diff_check",
    "glorot_uniform",
    "load_archive",
    "matmul",
    "mul",
    "named_gradients",
    "parameter",
    "relu",
    "reshape",
    "row_norms",
    "save_archive",
    "sqrt",
    "sub",
    "take",
    "tanh",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]
