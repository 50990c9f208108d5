"""Reverse-mode automatic differentiation over dense numpy arrays.

Every op builds a new :class:`Tensor` whose ``_backward`` closure maps the
upstream gradient onto gradients for its parents.  :func:`backward` walks the
graph in reverse topological order, visiting each node once.

Training runs in float32; gradient verification runs in float64 through the
:func:`precision` context manager.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS = 1e-8

_state = {"dtype": np.dtype(np.float32), "grad_enabled": True, "check_finite": True}


class NonFiniteError(FloatingPointError):
    """Raised when a forward op produces NaN or Inf from finite inputs."""


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with."""
    old = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


def default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def no_grad():
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


def set_check_finite(flag: bool) -> None:
    _state["check_finite"] = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else _state["dtype"])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple, backward: Callable | None) -> "Tensor":
        if _state["check_finite"] and data.dtype.kind == "f" and not np.isfinite(data).all():
            if all(np.isfinite(p.data).all() for p in parents):
                raise NonFiniteError("non-finite output from finite inputs")
        out = cls.__new__(cls)
        out.data = data
        out._grad = None
        out.name = None
        if _state["grad_enabled"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self):
        if self._grad is None and self.requires_grad:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=_state["dtype"]), requires_grad=True, name=name)


# -- graph traversal ----------------------------------------------------------

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached from any tensor that requires grad")
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node._grad = g.copy() if node._grad is None else node._grad + g
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not retain_graph:
            node._backward = None
            node._parents = ()


# -- broadcasting helpers -------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    return as_tensor(a), as_tensor(b)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def _bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return Tensor._make(out, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def _bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return Tensor._make(out, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def _bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return Tensor._make(out, (a, b), _bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def _bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb
    return Tensor._make(out, (a, b), _bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return Tensor._make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a, eps: float = EPS) -> Tensor:
    """sqrt(a + eps); the offset keeps the derivative finite at zero."""
    a = as_tensor(a)
    out = np.sqrt(a.data + eps)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    pos = a.data > 0
    out = np.where(pos, a.data, neg_part)
    return Tensor._make(out, (a,), lambda g: (g * np.where(pos, 1.0, neg_part + alpha).astype(g.dtype),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return Tensor._make(a.data * pos, (a,), lambda g: (g * pos,))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return Tensor._make(out, (a,), lambda g: (g * inside,))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the gradient to ``a``."""
    a, b = _pair(a, b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def _bw(g):
        return (_unbroadcast(g * take_a, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ~take_a, b.shape) if b.requires_grad else None)
    return Tensor._make(out, (a, b), _bw)


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def _bw(g):
        return (_unbroadcast(g * take_a, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ~take_a, b.shape) if b.requires_grad else None)
    return Tensor._make(out, (a, b), _bw)


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _pair(a, b)
    out = np.where(cond, a.data, b.data)

    def _bw(g):
        return (_unbroadcast(g * cond, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ~cond, b.shape) if b.requires_grad else None)
    return Tensor._make(out, (a, b), _bw)


# -- reductions and shape ops ------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)
    return Tensor._make(np.asarray(out), (a,), _bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims) / count

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)
    return Tensor._make(np.asarray(out), (a,), _bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    basic = _is_basic_index(index)

    def _bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)
    return Tensor._make(np.asarray(out), (a,), _bw)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def _bw(g):
        grads = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            grads.append(g[tuple(sl)])
        return tuple(grads)
    return Tensor._make(out, tuple(ts), _bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts]
    return concat(expanded, axis=axis)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data @ b.data

    def _bw(g):
        ga = gb = None
        if a.requires_grad:
            bt = np.swapaxes(b.data, -1, -2) if b.ndim > 1 else b.data
            ga = _unbroadcast(g @ bt if b.ndim > 1 else np.multiply.outer(g, b.data), a.shape)
        if b.requires_grad:
            at = np.swapaxes(a.data, -1, -2) if a.ndim > 1 else a.data
            gb = _unbroadcast(at @ g if a.ndim > 1 else np.multiply.outer(a.data, g), b.shape)
        return ga, gb
    return Tensor._make(out, (a, b), _bw)


# -- normalisations -----------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return Tensor._make(out, (a,), _bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def _bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return Tensor._make(out, (a,), _bw)


def l2_normalize(a, axis: int = 1, eps: float = EPS) -> Tensor:
    """a / sqrt(sum(a**2) + eps) along ``axis``."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True) + eps)
    out = a.data / norm

    def _bw(g):
        # g/n - x <g, x> / n^3
        return (g / norm - a.data * (g * a.data).sum(axis=axis, keepdims=True) / norm ** 3,)
    return Tensor._make(out, (a,), _bw)


# -- spatial ops (NCHW) -------------------------------------------------------

def _reflect_index(n: int, pad: int) -> np.ndarray:
    idx = np.arange(-pad, n + pad)
    idx = np.abs(idx)
    return np.where(idx > n - 1, 2 * (n - 1) - idx, idx)


def pad2d(a, pad: int, mode: str = "zero") -> Tensor:
    """Pad the last two axes by ``pad`` on every side; ``mode`` is zero or reflect."""
    a = as_tensor(a)
    if pad == 0:
        return a
    if mode == "zero":
        out = np.pad(a.data, [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)])

        def _bw(g):
            return (g[..., pad:-pad, pad:-pad],)
        return Tensor._make(out, (a,), _bw)
    if mode != "reflect":
        raise ValueError(f"unsupported padding mode {mode!r}")
    H, W = a.shape[-2:]
    if pad >= H or pad >= W:
        raise ValueError("reflect padding needs pad < spatial extent")
    out = np.pad(a.data, [(0, 0)] * (a.ndim - 2) + [(pad, pad), (pad, pad)], mode="reflect")
    ri, ci = _reflect_index(H, pad), _reflect_index(W, pad)

    def _bw(g):
        gw = g[..., pad:pad + W].copy()
        for j in list(range(pad)) + list(range(pad + W, W + 2 * pad)):
            gw[..., ci[j]] += g[..., j]
        gh = gw[..., pad:pad + H, :].copy()
        for i in list(range(pad)) + list(range(pad + H, H + 2 * pad)):
            gh[..., ri[i], :] += gw[..., i, :]
        return (gh,)
    return Tensor._make(out, (a,), _bw)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None,
           pad_mode: str = "zero") -> Tensor:
    """2-D cross-correlation.  ``weight`` is (out, in, kh, kw); padding defaults to same."""
    x, weight = _pair(x, weight)
    O, C, kh, kw = weight.shape
    if x.ndim != 4 or x.shape[1] != C:
        raise ValueError(f"conv2d: input {x.shape} does not match weight {weight.shape}")
    if padding is None:
        padding = kh // 2
    xp = pad2d(x, padding, pad_mode) if padding else x
    N, _, Hp, Wp = xp.shape
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    wmat = weight.data.reshape(O, C * kh * kw)
    if kh == 1 and kw == 1:
        src = xp.data[:, :, ::stride, ::stride] if stride > 1 else xp.data
        cols = src.reshape(N, C, Ho * Wo)
    else:
        # (N, C, kh, kw, Ho, Wo) so each (c, i, j) row is one shifted image
        win = sliding_window_view(xp.data, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(N, C * kh * kw, Ho * Wo)
    out = np.matmul(wmat, cols)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    out = out.reshape(N, O, Ho, Wo)
    parents = (xp, weight) if bias is None else (xp, weight, bias)

    def _bw(g):
        gm = g.reshape(N, O, Ho * Wo)
        gx = gw = None
        if xp.requires_grad:
            dcols = np.matmul(wmat.T, gm).reshape(N, C, kh, kw, Ho, Wo)
            if kh == 1 and kw == 1 and stride == 1:
                gx = dcols.reshape(xp.shape)
            else:
                gx = np.zeros(xp.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gx[:, :, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride] += \
                            dcols[:, :, i, j]
        if weight.requires_grad:
            gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, (gm.sum(axis=(0, 2)) if bias.requires_grad else None)
    return Tensor._make(out, parents, _bw)


def avg_pool3x3(a) -> Tensor:
    """3x3 mean filter, stride 1, no padding (pad beforehand to keep the size)."""
    a = as_tensor(a)
    H, W = a.shape[-2:]
    Ho, Wo = H - 2, W - 2
    d = a.data
    rows = d[..., 0:Ho, :] + d[..., 1:Ho + 1, :] + d[..., 2:Ho + 2, :]
    out = (rows[..., 0:Wo] + rows[..., 1:Wo + 1] + rows[..., 2:Wo + 2]) / 9.0

    def _bw(g):
        g = g / 9.0
        gc = np.zeros(g.shape[:-1] + (W,), dtype=g.dtype)
        for j in range(3):
            gc[..., j:j + Wo] += g
        gr = np.zeros(a.shape, dtype=g.dtype)
        for i in range(3):
            gr[..., i:i + Ho, :] += gc
        return (gr,)
    return Tensor._make(out, (a,), _bw)


def upsample_nearest(a, factor: int = 2) -> Tensor:
    a = as_tensor(a)
    out = a.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    H, W = a.shape[-2:]

    def _bw(g):
        g = g.reshape(g.shape[:-2] + (H, factor, W, factor))
        return (g.sum(axis=(-3, -1)),)
    return Tensor._make(out, (a,), _bw)


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    np.add.at(m, (np.arange(n_out), i0), 1 - w)
    np.add.at(m, (np.arange(n_out), i1), w)
    return m


def resize_bilinear(a, size: tuple[int, int]) -> Tensor:
    """Separable bilinear resize of the last two axes (half-pixel centres)."""
    a = as_tensor(a)
    H, W = a.shape[-2:]
    mh = _bilinear_matrix(H, size[0], a.dtype)
    mw = _bilinear_matrix(W, size[1], a.dtype)
    out = mh @ a.data @ mw.T

    def _bw(g):
        return (mh.T @ g @ mw,)
    return Tensor._make(out, (a,), _bw)


def resize(a, size: tuple[int, int], mode: str = "nearest") -> Tensor:
    a = as_tensor(a)
    if mode == "bilinear":
        return resize_bilinear(a, size)
    if mode != "nearest":
        raise ValueError(f"unknown resize mode {mode!r}")
    H, W = a.shape[-2:]
    ri = (np.arange(size[0]) * H) // size[0]
    ci = (np.arange(size[1]) * W) // size[1]
    return getitem(getitem(a, (Ellipsis, ri, slice(None))), (Ellipsis, ci))


# -- verification -----------------------------------------------------------------

class NonDeterministicError(RuntimeError):
    pass


def gradient_check(f: Callable[..., Tensor], x, step: float = 1e-5,
                   coords: int | None = None, seed: int = 0) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``x`` is a tensor or a list of tensors; ``f`` receives them positionally.
    With ``coords`` set, a random subset of that many coordinates per tensor is
    probed instead of all of them.
    """
    xs = [x] if isinstance(x, (Tensor, np.ndarray)) else list(x)
    xs = [t if isinstance(t, Tensor) else Tensor(t) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.zero_grad()
    loss = f(*xs)
    base = loss.item()
    if f(*xs).item() != base:
        raise NonDeterministicError("f returned different values for identical inputs")
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in xs:
        analytic = t.grad.reshape(-1)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = rng.choice(flat.size, size=coords, replace=False)
        with no_grad():
            for k in idx:
                orig = flat[k]
                flat[k] = orig + step
                fp = f(*xs).item()
                flat[k] = orig - step
                fm = f(*xs).item()
                flat[k] = orig
                numeric = (fp - fm) / (2 * step)
                err = np.abs(analytic[k] - numeric) / max(1.0, np.abs(analytic[k]))
                worst = max(worst, float(err))
    return worst
