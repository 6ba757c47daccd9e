"""Differentiable primitives.

Broadcasting policy: elementwise ops broadcast only when one operand's shape
is a trailing suffix of the other's (leading batch axes); anything else needs
an explicit `expand` or the fused `channel_affine`. Matrix multiply follows
NumPy batch broadcasting. Each op returns a new Tensor carrying a VJP closure.
"""

import math

import numpy as np

from .. import kernels
from ..errors import ShapeError
from .tensor import Tensor

# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_same_dtype(a, b, op):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def _suffix_broadcast(sa, sb, op):
    """Output shape when one of sa/sb is a trailing suffix of the other."""
    if sa == sb:
        return sa
    long_, short = (sa, sb) if len(sa) >= len(sb) else (sb, sa)
    if short == tuple(long_[len(long_) - len(short):]):
        return long_
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not suffix-broadcast")


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of NumPy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _c(arr):
    return np.ascontiguousarray(arr)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "add")
    _suffix_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), vjp, "add")


def mul(a, b):
    b = _as_tensor(b, a)
    _check_same_dtype(a, b, "mul")
    _suffix_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(out, (a, b), vjp, "mul")


def scalar_mul(a, s):
    s = float(s)
    out = a.data * a.data.dtype.type(s)

    def vjp(g):
        return (g * a.data.dtype.type(s),)

    return Tensor._from_op(out, (a,), vjp, "scalar_mul")


def scalar_add(a, s):
    s = float(s)
    out = a.data + a.data.dtype.type(s)

    def vjp(g):
        return (g,)

    return Tensor._from_op(out, (a,), vjp, "scalar_add")


def neg(a):
    return scalar_mul(a, -1.0)


def sub(a, b):
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return scalar_add(a, -float(b))


def expand(a, shape):
    """Explicit broadcast of a to `shape` (general NumPy broadcasting rules)."""
    try:
        out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {tuple(shape)}")

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return Tensor._from_op(out, (a,), vjp, "expand")


# ---------------------------------------------------------------------------
# matrix multiply and linear
# ---------------------------------------------------------------------------


def matmul(a, b):
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} x {b.shape}")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._from_op(out, (a, b), vjp, "matmul")


def linear(x, w, b=None):
    """x[..., in] @ w[out, in].T + b[out]."""
    _check_same_dtype(x, w, "linear")
    if x.shape[-1] != w.shape[-1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {w.shape[-1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out2 = x2 @ w.data.T
    if b is not None:
        out2 = out2 + b.data
    out = out2.reshape(*lead, w.shape[0])

    def vjp(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w.data).reshape(x.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._from_op(out, parents, vjp, "linear")


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def attention(q, k, v, key_mask=None):
    """Scaled dot-product attention over [batch, heads, seq, head_dim].

    key_mask, when given, is a bool array [batch, seq]; False keys are
    excluded from the softmax (used for padded/nulled text tokens).
    """
    _check_same_dtype(q, k, "attention")
    _check_same_dtype(q, v, "attention")
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"attention operands must share shape: {q.shape}, {k.shape}, {v.shape}")
    if q.ndim != 4:
        raise ShapeError(f"attention expects [b,h,s,dh], got {q.shape}")
    b, h, s, dh = q.shape
    scale = q.data.dtype.type(1.0 / math.sqrt(dh))

    qs = q.data * scale
    scores = qs @ _c(np.swapaxes(k.data, -1, -2))  # [b,h,s,s]
    if key_mask is not None:
        if key_mask.shape != (b, s):
            raise ShapeError(f"key_mask must be [batch, seq]={b, s}, got {key_mask.shape}")
        bias = np.where(key_mask, 0.0, -1e30).astype(q.data.dtype)
        scores += bias[:, None, None, :]
    p = kernels.softmax_fwd(scores.reshape(b * h * s, s)).reshape(b, h, s, s)
    out = p @ v.data

    def vjp(g):
        gv = _c(np.swapaxes(p, -1, -2)) @ g
        gp = g @ _c(np.swapaxes(v.data, -1, -2))
        gs = kernels.softmax_bwd(p.reshape(b * h * s, s), _c(gp.reshape(b * h * s, s)))
        gs = gs.reshape(b, h, s, s)
        gq = (gs @ k.data) * scale
        gk = _c(np.swapaxes(gs, -1, -2)) @ qs
        return gq, gk, gv

    return Tensor._from_op(out, (q, k, v), vjp, "attention")


def softmax(x, axis=-1):
    """Softmax along `axis`; rows sum to one."""
    ax = axis % x.ndim
    moved = np.moveaxis(x.data, ax, -1)
    lead = moved.shape[:-1]
    d = moved.shape[-1]
    p2 = kernels.softmax_fwd(_c(moved.reshape(-1, d)))
    out = np.moveaxis(p2.reshape(*lead, d), -1, ax)

    def vjp(g):
        gm = _c(np.moveaxis(g, ax, -1).reshape(-1, d))
        gx = kernels.softmax_bwd(p2, gm).reshape(*lead, d)
        return (np.moveaxis(gx, -1, ax),)

    return Tensor._from_op(out, (x,), vjp, "softmax")


# ---------------------------------------------------------------------------
# normalization and modulation
# ---------------------------------------------------------------------------


def rms_norm(x, gain, eps=1e-6):
    """x / sqrt(mean(x^2, last) + eps) * gain."""
    _check_same_dtype(x, gain, "rms_norm")
    if eps <= 0:
        raise ShapeError(f"rms_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,):
        raise ShapeError(f"rms_norm gain shape {gain.shape} != ({d},)")
    x2 = _c(x.data.reshape(-1, d))
    y2, inv = kernels.rmsnorm_fwd(x2, _c(gain.data), float(eps))
    out = y2.reshape(x.shape)

    def vjp(g):
        gx2, ggain = kernels.rmsnorm_bwd(x2, _c(gain.data), inv, _c(g.reshape(-1, d)))
        return gx2.reshape(x.shape), ggain

    return Tensor._from_op(out, (x, gain), vjp, "rms_norm")


def channel_affine(x, scale, shift=None):
    """Per-channel scale/shift broadcast over the sequence axis.

    x is [..., L, d]; scale/shift are [d] or [..., d] (one vector per batch
    element, applied to every sequence position).
    """
    _check_same_dtype(x, scale, "channel_affine")
    d = x.shape[-1]
    if scale.shape == (d,):
        s_arr = scale.data
        per_batch = False
    elif scale.shape == x.shape[:-2] + (d,):
        s_arr = scale.data[..., None, :]
        per_batch = True
    else:
        raise ShapeError(f"channel_affine: scale {scale.shape} does not fit x {x.shape}")
    if shift is not None and shift.shape != scale.shape:
        raise ShapeError(f"channel_affine: shift {shift.shape} != scale {scale.shape}")

    out = x.data * s_arr
    if shift is not None:
        out = out + (shift.data[..., None, :] if per_batch else shift.data)

    def vjp(g):
        gx = g * s_arr
        if per_batch:
            gscale = (g * x.data).sum(axis=-2)
            gshift = g.sum(axis=-2) if shift is not None else None
        else:
            red = tuple(range(g.ndim - 1))
            gscale = (g * x.data).sum(axis=red)
            gshift = g.sum(axis=red) if shift is not None else None
        return (gx, gscale, gshift) if shift is not None else (gx, gscale)

    parents = (x, scale, shift) if shift is not None else (x, scale)
    return Tensor._from_op(out, parents, vjp, "channel_affine")


def modulate(x, shift, scale):
    """(1 + scale) * x + shift, with x already pre-normalized."""
    return channel_affine(x, scale_plus_one(scale), shift)


def scale_plus_one(t):
    return scalar_add(t, 1.0)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def silu(x):
    flat = _c(x.data.reshape(-1))
    out = kernels.silu_fwd(flat).reshape(x.shape)

    def vjp(g):
        return (kernels.silu_bwd(flat, _c(g.reshape(-1))).reshape(x.shape),)

    return Tensor._from_op(out, (x,), vjp, "silu")


def gelu(x):
    """GELU with the tanh approximation."""
    flat = _c(x.data.reshape(-1))
    out = kernels.gelu_fwd(flat).reshape(x.shape)

    def vjp(g):
        return (kernels.gelu_bwd(flat, _c(g.reshape(-1))).reshape(x.shape),)

    return Tensor._from_op(out, (x,), vjp, "gelu")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x, shape):
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), vjp, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return Tensor._from_op(out, (x,), vjp, "transpose")


def concat(tensors, axis):
    tensors = list(tensors)
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t, "concat")
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=ax))

    return Tensor._from_op(out, tuple(tensors), vjp, "concat")


def split(x, sizes, axis):
    """Split into chunks of the given sizes along `axis`."""
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split sizes {sizes} do not sum to axis extent {x.shape[ax]}")
    bounds = np.cumsum(sizes)[:-1]
    parts_data = np.split(x.data, bounds, axis=ax)
    parts = []
    for i, pd in enumerate(parts_data):

        def vjp(g, i=i):
            gx = np.zeros_like(x.data)
            start = 0 if i == 0 else int(bounds[i - 1])
            sl = [slice(None)] * x.ndim
            sl[ax] = slice(start, start + sizes[i])
            gx[tuple(sl)] = g
            return (gx,)

        parts.append(Tensor._from_op(np.ascontiguousarray(pd), (x,), vjp, "split"))
    return tuple(parts)


# ---------------------------------------------------------------------------
# rotary rotation
# ---------------------------------------------------------------------------


def rope_rotate(x, cos, sin):
    """Rotate interleaved (even, odd) pairs of the last axis by fixed angles.

    cos/sin are constant arrays broadcastable to x[..., 0::2]; gradients flow
    only to x (the rotation is an isometry, VJP rotates by the negated angle).
    """
    if x.shape[-1] % 2 != 0:
        raise ShapeError(f"rope_rotate needs an even last axis, got {x.shape}")
    cos = np.asarray(cos, dtype=x.data.dtype)
    sin = np.asarray(sin, dtype=x.data.dtype)
    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def vjp(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return Tensor._from_op(out, (x,), vjp, "rope_rotate")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    axes = _axis_tuple(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(out, (x,), vjp, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _axis_tuple(axis, x.ndim)
    n = 1
    for a in axes:
        n *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).astype(x.data.dtype),)

    return Tensor._from_op(out, (x,), vjp, "mean")


def mse(a, b):
    """Mean squared error over all elements; scalar output."""
    _check_same_dtype(a, b, "mse")
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.asarray((diff * diff).mean(), dtype=a.data.dtype)

    def vjp(g):
        scale = g * a.data.dtype.type(2.0 / diff.size)
        gd = scale * diff
        return gd, -gd

    return Tensor._from_op(out, (a, b), vjp, "mse")


# ---------------------------------------------------------------------------
# operator sugar on Tensor
# ---------------------------------------------------------------------------


def _binop(a, b, tensor_op, scalar_op):
    if isinstance(b, Tensor):
        return tensor_op(a, b)
    return scalar_op(a, float(b))


Tensor.__add__ = lambda self, o: _binop(self, o, add, scalar_add)
Tensor.__radd__ = lambda self, o: scalar_add(self, float(o))
Tensor.__mul__ = lambda self, o: _binop(self, o, mul, scalar_mul)
Tensor.__rmul__ = lambda self, o: scalar_mul(self, float(o))
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: scalar_add(neg(self), float(o))
Tensor.__neg__ = lambda self: neg(self)
Tensor.__truediv__ = lambda self, o: scalar_mul(self, 1.0 / float(o))
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.reshape = lambda self, shape: reshape(self, shape)
Tensor.transpose = lambda self, axes: transpose(self, axes)
Tensor.sum = lambda self, axis=None, keepdims=False: sum_(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
