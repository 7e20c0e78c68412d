from .tensor import (
    LEAKY_SLOPE,
    Tape,
    Tensor,
    absolute,
    add,
    clamp01,
    concat,
    div,
    exp,
    leaky_relu,
    log,
    matmul,
    mul,
    narrow,
    neg,
    record_op,
    reshape,
    sigmoid,
    softplus,
    sub,
    tmean,
    transpose,
    tsum,
)
from .conv import avg_downsample2x, conv2d, upsample_bilinear2x
from .grid import trilinear_sample
from .gradcheck import grad_check

__all__ = [
    "LEAKY_SLOPE",
    "Tape",
    "Tensor",
    "absolute",
    "add",
    "avg_downsample2x",
    "clamp01",
    "concat",
    "conv2d",
    "div",
    "exp",
    "grad_check",
    "leaky_relu",
    "log",
    "matmul",
    "mul",
    "narrow",
    "neg",
    "record_op",
    "reshape",
    "sigmoid",
    "softplus",
    "sub",
    "tmean",
    "transpose",
    "trilinear_sample",
    "tsum",
    "upsample_bilinear2x",
]
