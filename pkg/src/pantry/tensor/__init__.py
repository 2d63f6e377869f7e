from pantry.tensor.core import Tape, Tensor, active_tape, backward
from pantry.tensor.gradcheck import GradCheckReport, gradient_check
from pantry.tensor.ops import (
    add,
    avg_pool2d,
    conv2d,
    conv_output_size,
    cross_entropy,
    dense,
    flatten,
    global_avg_pool,
    max_pool2d,
    mul,
    relu,
    scale,
    softmax,
)
from pantry.tensor.ops import sum as tsum

__all__ = [
    "GradCheckReport",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "avg_pool2d",
    "backward",
    "conv2d",
    "conv_output_size",
    "cross_entropy",
    "dense",
    "flatten",
    "global_avg_pool",
    "gradient_check",
    "max_pool2d",
    "mul",
    "relu",
    "scale",
    "softmax",
    "tsum",
]
