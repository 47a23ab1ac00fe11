"""Minimal dense-tensor arithmetic with reverse-mode differentiation."""

from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    assert_finite,
    collect_parameters,
    float_dtype,
    grad_enabled,
    no_grad,
    precision,
    precision_bits,
    set_precision,
)
from .ops import (
    add,
    bmm,
    clip,
    concat,
    conv1d,
    conv2d_same,
    conv_transpose1d,
    coverage_counts,
    div,
    dropout,
    exp,
    fold,
    layer_norm,
    linear_rows,
    log,
    log10,
    matmul,
    maximum,
    mean,
    mul,
    narrow,
    neg,
    pad_axis,
    power,
    relu,
    repeat_axis,
    reshape,
    sigmoid,
    softmax,
    sub,
    tanh,
    tensor_sum,
    transpose,
    unfold,
)
from .gradcheck import grad_check

__all__ = [
    "Parameter", "Tensor", "as_tensor", "assert_finite", "collect_parameters",
    "float_dtype", "grad_enabled", "no_grad", "precision", "precision_bits",
    "set_precision",
    "add", "bmm", "clip", "concat", "conv1d", "conv2d_same", "conv_transpose1d",
    "coverage_counts", "div", "dropout", "exp", "fold", "layer_norm",
    "linear_rows", "log", "log10", "matmul", "maximum", "mean", "mul",
    "narrow", "neg", "pad_axis",
    "power", "relu", "repeat_axis", "reshape", "sigmoid", "softmax", "sub",
    "tanh", "tensor_sum", "transpose", "unfold",
    "grad_check",
]
