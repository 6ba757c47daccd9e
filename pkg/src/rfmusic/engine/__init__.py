"""Tensor engine: dense arrays + reverse-mode autodiff."""

from .ops import (
    add,
    attention,
    channel_affine,
    concat,
    expand,
    gelu,
    linear,
    matmul,
    mean,
    modulate,
    mse,
    mul,
    neg,
    reshape,
    rms_norm,
    rope_rotate,
    scalar_add,
    scalar_mul,
    silu,
    softmax,
    split,
    sub,
    sum_,
    transpose,
)
from .tensor import (
    Graph,
    Tensor,
    backward,
    check_finite,
    finite_checks_enabled,
    grad_enabled,
    no_grad,
    ones,
    randn,
    set_finite_checks,
    tensor,
    zero_grads,
    zeros,
)

__all__ = [
    "Graph", "Tensor", "backward", "no_grad", "tensor", "zeros", "ones", "randn",
    "zero_grads", "check_finite", "set_finite_checks", "finite_checks_enabled",
    "grad_enabled",
    "add", "mul", "sub", "neg", "scalar_add", "scalar_mul", "expand",
    "matmul", "linear", "attention", "softmax", "rms_norm", "modulate",
    "channel_affine", "silu", "gelu", "reshape", "transpose", "concat", "split",
    "rope_rotate", "sum_", "mean", "mse",
]
