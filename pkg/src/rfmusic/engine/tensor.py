"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap row-major NumPy arrays (float32 or float64). Every operation in
`ops` records its parents and a VJP closure on the output tensor; `backward`
walks the recorded graph once in reverse topological order and accumulates
gradients on the `requires_grad` leaves.

Values are validated to be finite after every public operation (disable with
RFMUSIC_FINITE_CHECKS=0 for benchmarking). Tensors are immutable after
creation except through the optimizer's in-place update path.
"""

import os
from contextlib import contextmanager

import numpy as np

from ..errors import ContractError, NumericError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

_grad_enabled = True
_finite_checks = os.environ.get("RFMUSIC_FINITE_CHECKS", "1") != "0"


def finite_checks_enabled():
    return _finite_checks


def set_finite_checks(on):
    """Toggle post-op finite validation; returns the previous setting."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = bool(on)
    return prev


@contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, EMA, data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def check_finite(arr, where):
    """Raise NumericError if arr contains NaN or Inf (skipped when disabled).

    Single reduction pass: any NaN/Inf element forces a non-finite sum
    (opposite infinities cancel to NaN), so nothing slips through.
    """
    if not _finite_checks or arr.size == 0:
        return
    if not np.isfinite(arr.sum()):
        raise NumericError(f"non-finite values after {where}")


def _coerce(data, dtype):
    np_dtype = DTYPES.get(dtype, dtype)
    arr = np.asarray(data, dtype=np_dtype)
    if arr.dtype not in (np.float32, np.float64):
        raise ShapeError(f"unsupported dtype {arr.dtype}; use f32 or f64")
    return arr


class Tensor:
    """N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, dtype="f32", name=None):
        self.data = _coerce(data, dtype)
        check_finite(self.data, "tensor construction")
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._vjp = None
        self._op = None

    # -- construction from op results ------------------------------------

    @classmethod
    def _from_op(cls, data, parents, vjp, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        check_finite(data, op)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
            out._op = op
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
            out._op = None
        return out

    # -- views ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return "f32" if self.data.dtype == np.float32 else "f64"

    def numpy(self):
        """The underlying array (no copy); treat as read-only."""
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t.name = self.name
        t._parents = ()
        t._vjp = None
        t._op = None
        return t

    def astype(self, dtype):
        """Detached copy in the given dtype ('f32' or 'f64')."""
        t = self.detach()
        t.data = self.data.astype(DTYPES[dtype])
        return t

    def is_leaf(self):
        return self._vjp is None

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad}{tag})"

    # Arithmetic sugar; implementations live in ops.py (bound at import).


class Graph:
    """Topologically ordered view of the recorded graph beneath a root."""

    def __init__(self, nodes):
        self.nodes = nodes  # parents before children

    @classmethod
    def trace(cls, root):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into .grad for every requires_grad leaf.

    Repeated calls accumulate; zero grads explicitly between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any requires_grad tensor")

    graph = Graph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    if _finite_checks:
        for node in graph.nodes:
            if node._vjp is None and node.requires_grad and node.grad is not None:
                check_finite(node.grad, f"backward (leaf {node.name or 'unnamed'})")


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def tensor(data, requires_grad=False, dtype="f32", name=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def zeros(shape, dtype="f32", requires_grad=False, name=None):
    return Tensor(np.zeros(shape, DTYPES[dtype]), requires_grad, dtype, name)


def ones(shape, dtype="f32", requires_grad=False, name=None):
    return Tensor(np.ones(shape, DTYPES[dtype]), requires_grad, dtype, name)


def randn(shape, rng, std=1.0, dtype="f32", requires_grad=False, name=None):
    arr = rng.standard_normal(shape).astype(DTYPES[dtype]) * DTYPES[dtype](std)
    return Tensor(arr, requires_grad, dtype, name)
