from .tensor import (
    CATALOG,
    Tensor,
    add,
    backward,
    broadcast,
    concat,
    conv1d,
    conv3d,
    cross_entropy,
    default_dtype,
    eval_op,
    l2_normalize,
    matmul,
    maxpool,
    meanpool,
    mul,
    mul_scalar,
    precision,
    relu,
    reshape,
    softmax,
    transpose,
)
from .optim import AdamW, AdamWConfig, adamw_step
from .gradcheck import GradCheckReport, finite_difference_check, grad_check

__all__ = [
    "CATALOG",
    "Tensor",
    "add",
    "backward",
    "broadcast",
    "concat",
    "conv1d",
    "conv3d",
    "cross_entropy",
    "default_dtype",
    "eval_op",
    "l2_normalize",
    "matmul",
    "maxpool",
    "meanpool",
    "mul",
    "mul_scalar",
    "precision",
    "relu",
    "reshape",
    "softmax",
    "transpose",
    "AdamW",
    "AdamWConfig",
    "adamw_step",
    "GradCheckReport",
    "finite_difference_check",
    "grad_check",
]
