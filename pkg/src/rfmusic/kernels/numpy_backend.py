"""Pure-NumPy implementations of the hot kernels.

Reference semantics for the compiled backend in `_core.pyx`: both expose the
same functions with the same dtypes and return conventions, so the engine can
dispatch to either at import time. Everything here is vectorized; no Python
loops over elements.
"""

import math

import numpy as np

NAME = "numpy"

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def softmax_fwd(x):
    """Row-wise softmax of a 2-D C-contiguous array (last axis reduced)."""
    m = x.max(axis=1, keepdims=True)
    p = np.exp(x - m)
    p /= p.sum(axis=1, keepdims=True)
    return p


def softmax_bwd(p, dy):
    """dL/dx given probabilities p and dL/dp, both 2-D."""
    inner = np.einsum("ij,ij->i", p, dy)[:, None]
    return p * (dy - inner)


def rmsnorm_fwd(x, gain, eps):
    """Row-wise x / sqrt(mean(x^2)+eps) * gain. Returns (y, inv_rms[rows])."""
    ms = np.einsum("ij,ij->i", x, x) / x.shape[1]
    inv = 1.0 / np.sqrt(ms + eps)
    return x * inv[:, None] * gain, inv


def rmsnorm_bwd(x, gain, inv, dy):
    """Backward of rmsnorm_fwd. Returns (dx, dgain)."""
    d = x.shape[1]
    dyg = dy * gain
    dot = np.einsum("ij,ij->i", dyg, x)
    dx = inv[:, None] * dyg - (inv**3 / d)[:, None] * dot[:, None] * x
    dgain = np.einsum("ij,ij->j", dy, x * inv[:, None])
    return dx, dgain


def silu_fwd(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def silu_bwd(x, dy):
    s = 1.0 / (1.0 + np.exp(-x))
    return dy * s * (1.0 + x * (1.0 - s))


def gelu_fwd(x):
    """Tanh-approximation GELU."""
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, dy):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """Bias-corrected Adam with decoupled weight decay, in place on flat arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    if weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
