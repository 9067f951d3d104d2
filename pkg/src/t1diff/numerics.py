"""Dense tensors with tape-based reverse-mode differentiation.

Only the primitives a small transformer and its training loop need. There is
no implicit broadcasting: elementwise binary ops require equal shapes, and
:func:`broadcast_rows` is the one explicit way to repeat a per-batch vector
across a token axis.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels

_DTYPE = np.float64
CHECK_FINITE = True
_GRAD_ENABLED = True


def get_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    """Set the global floating precision (float64 for checks, float32 for speed)."""
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}")
    _DTYPE = dt.type


@contextlib.contextmanager
def precision(dtype):
    old = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape (inference)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    """An n-d array plus the bookkeeping needed to backpropagate into it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        if CHECK_FINITE and arr.size and not np.isfinite(arr).all():
            raise FloatingPointError(
                f"non-finite values produced{' in ' + name if name else ''}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward, name=None) -> Tensor:
    if not (_GRAD_ENABLED and any(p.requires_grad for p in parents)):
        return Tensor(data, name=name)
    return Tensor(data, requires_grad=True, name=name,
                  _parents=tuple(parents), _backward=backward)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _make(a.data + s, (a,), lambda g: (g,), "add_scalar")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    sig = 1.0 / (1.0 + np.exp(-xd))
    out = xd * sig

    def back(g):
        return (g * (sig * (1.0 + xd * (1.0 - sig))),)

    return _make(out, (x,), back, "silu")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    out, th = _kernels.gelu_fwd(xd)
    return _make(out, (x,), lambda g: (_kernels.gelu_bwd(g, xd, th),), "gelu")


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where mask is true, else ``b``. mask is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "where")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _make(np.where(m, a.data, b.data), (a, b),
                 lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)), "where")


# ----------------------------------------------------------------------------
# reductions / shape
# ----------------------------------------------------------------------------

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shp = x.shape
    return _make(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shp).copy(),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shp = x.shape
    if axis is None:
        n = x.size
        return _make(np.asarray(x.data.mean()), (x,),
                     lambda g: (np.full(shp, g / n, dtype=x.data.dtype),), "mean")
    axis = axis % x.ndim
    n = shp[axis]

    def back(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), shp).copy(),)

    return _make(x.data.mean(axis=axis), (x,), back, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    shp = x.shape
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(shp),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    axis = axis % xs[0].ndim
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, back, "concat")


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """x[..., start:stop, ...] along ``axis``."""
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shp, dt = x.shape, x.data.dtype

    def back(g):
        full = np.zeros(shp, dtype=dt)
        full[idx] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), back, "slice")


def broadcast_rows(x: Tensor, length: int) -> Tensor:
    """Repeat x [B, D] along a new token axis: returns [B, length, D]."""
    if x.ndim != 2:
        raise ValueError(f"broadcast_rows expects [B, D], got {x.shape}")
    out = np.repeat(x.data[:, None, :], length, axis=1)
    return _make(out, (x,), lambda g: (g.sum(axis=1),), "broadcast_rows")


# ----------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D x 2-D, or batched [..., M, K] x [..., K, N]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: dimension mismatch {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), back, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [..., K] @ w [K, N] (+ b [N])."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: dimension mismatch {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if b is not None:
        out = out + b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back, "linear")


# ----------------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    moved = np.moveaxis(x.data, axis, -1)
    shp = moved.shape
    y2 = _kernels.softmax_fwd(moved.reshape(-1, shp[-1]))
    out = np.moveaxis(y2.reshape(shp), -1, axis)

    def back(g):
        gm = np.moveaxis(g, axis, -1).reshape(-1, shp[-1])
        dx = _kernels.softmax_bwd(gm, y2)
        return (np.moveaxis(dx.reshape(shp), -1, axis),)

    return _make(out, (x,), back, "softmax")


LN_EPS = 1e-5


def layer_norm(x: Tensor, axis: int = -1, eps: float = LN_EPS) -> Tensor:
    """Zero-mean, unit-variance normalization along ``axis`` (no affine)."""
    axis = axis % x.ndim
    if x.shape[axis] < 2:
        raise ValueError("layer_norm needs an axis of length >= 2")
    moved = np.moveaxis(x.data, axis, -1)
    shp = moved.shape
    y2, rstd = _kernels.layer_norm_fwd(moved.reshape(-1, shp[-1]), eps)
    out = np.moveaxis(y2.reshape(shp), -1, axis)

    def back(g):
        gm = np.moveaxis(g, axis, -1).reshape(-1, shp[-1])
        dx = _kernels.layer_norm_bwd(gm, y2, rstd)
        return (np.moveaxis(dx.reshape(shp), -1, axis),)

    return _make(out, (x,), back, "layer_norm")


# ----------------------------------------------------------------------------
# backward
# ----------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Leaves listed in ``params`` but not connected to ``loss`` get a zero grad.
    """
    if loss.size != 1:
        raise ValueError("backward needs a scalar loss")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        order = _topo_order(loss)
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

class Adam:
    """Adam without weight decay."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
