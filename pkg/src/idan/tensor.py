"""Dense NCHW tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor requiring gradients records its parents
and a backward closure on the output. ``Tensor.backward`` walks that tape once
in reverse topological order and then releases it, so each forward pass
builds a fresh tape.

The production path runs in float32. ``check_mode()`` switches newly created
tensors to float64, which is what the gradient checker uses.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

_STATE = {"dtype": np.float32, "grad_enabled": True, "trace": None}


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


def default_dtype():
    return _STATE["dtype"]


@contextlib.contextmanager
def check_mode():
    """Create tensors in float64 inside the block."""
    prev = _STATE["dtype"]
    _STATE["dtype"] = np.float64
    try:
        yield
    finally:
        _STATE["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _STATE["grad_enabled"]
    _STATE["grad_enabled"] = False
    try:
        yield
    finally:
        _STATE["grad_enabled"] = prev


@contextlib.contextmanager
def branch_trace():
    """Collect the branch taken by every piecewise op (relu, abs, max-pool) in the block."""
    prev = _STATE["trace"]
    record: list = []
    _STATE["trace"] = record
    try:
        yield record
    finally:
        _STATE["trace"] = prev


def _trace(pattern) -> None:
    if _STATE["trace"] is not None:
        _STATE["trace"].append(pattern)


class Tensor:
    """N-dimensional float array with an optional gradient record."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=_STATE["dtype"], copy=True, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None
        self._consumed = False

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._consumed = False
        track = _STATE["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward_fn = backward_fn if track else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _raise_not_scalar(self.shape)
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self) -> None:
        """Populate ``.grad`` on every tensor reachable from this scalar.

        The tape is released afterwards; a second call raises. A leaf whose
        gradient was not reset (``zero_grad``) since the previous backward
        also raises rather than silently accumulating.
        """
        if self.data.size != 1:
            _raise_not_scalar(self.shape)
        if self._consumed:
            raise GradientError("backward() already ran on this graph; run a new forward pass")
        if not self.requires_grad:
            raise GradientError("loss does not depend on any tensor with requires_grad=True")

        order = _topological_order(self)
        for node in order:
            if node._backward_fn is None and node.requires_grad and node.grad is not None:
                raise GradientError(
                    f"leaf {node!r} still holds a gradient from a previous backward; call zero_grad() first"
                )

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        for node in order:
            node._parents = ()
            node._backward_fn = None
            node._consumed = True


def _raise_not_scalar(shape):
    raise ShapeError(f"expected a scalar tensor, got shape {shape}")


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        return Tensor._result(np.full(like.shape, x, dtype=like.dtype), (), None)
    return Tensor(x)


def zero_grad(params) -> None:
    for p in _iter_params(params):
        p.grad = None


def _iter_params(params):
    return params.values() if isinstance(params, dict) else params


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._result(a.data + c, (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._result(a.data - c, (a,), lambda g: (g,))
    _same_shape(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._result(a.data * c, (a,), lambda g: (g * c,))
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._result(a.data / c, (a,), lambda g: (g / c,))
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return Tensor._result(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    s = np.sign(a.data)  # sign(0) = 0 gives the abs'(0) = 0 convention
    _trace(s)
    return Tensor._result(np.abs(a.data), (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    _trace(mask)
    return Tensor._result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    # keep the open interval (0, 1) even where the float format saturates
    fi = np.finfo(x.dtype)
    s = np.clip(s, fi.tiny, 1.0 - fi.epsneg)

    def backward(g):
        d = g * s * (1.0 - s)
        # saturated outputs otherwise seed subnormal gradients downstream, which slow every conv backward
        # several-fold; anything below sqrt(tiny) is many orders under a meaningful gradient
        return (np.where(np.abs(d) < np.sqrt(fi.tiny), 0.0, d).astype(d.dtype),)

    return Tensor._result(s, (a,), backward)


def reduce_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.full(shape, g, dtype=g.dtype),))


def reduce_mean_channels(a: Tensor) -> Tensor:
    if a.data.ndim != 4:
        raise ShapeError(f"reduce_mean_channels expects NCHW, got {a.shape}")
    c = a.shape[1]
    out = a.data.mean(axis=1, keepdims=True)
    return Tensor._result(out, (a,), lambda g: (np.repeat(g / c, c, axis=1),))


# ---------------------------------------------------------------------------
# channel plumbing


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return Tensor._result(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def split_channels_half(t: Tensor) -> tuple:
    if t.data.ndim != 4:
        raise ShapeError(f"split_channels_half expects NCHW, got {t.shape}")
    c = t.shape[1]
    if c % 2:
        raise ShapeError(f"split_channels_half needs an even channel count, got {c}")
    h = c // 2

    def first_back(g):
        full = np.zeros_like(t.data)
        full[:, :h] = g
        return (full,)

    def second_back(g):
        full = np.zeros_like(t.data)
        full[:, h:] = g
        return (full,)

    first = Tensor._result(np.ascontiguousarray(t.data[:, :h]), (t,), first_back)
    second = Tensor._result(np.ascontiguousarray(t.data[:, h:]), (t,), second_back)
    return first, second


# ---------------------------------------------------------------------------
# spatial ops


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) via im2col and one matrix product."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKK weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, cw, k, k2 = weight.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} / padding={padding}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {weight.shape} larger than padded input {x.shape}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")

    s, p = stride, padding
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    # channel-major im2col: rows (c, ki, kj), columns (n, y, x); inner copies stay contiguous
    xc = x.data.transpose(1, 0, 2, 3)
    if p:
        xc = np.pad(xc, ((0, 0), (0, 0), (p, p), (p, p)))
    if k == 1 and s == 1:
        cols = np.ascontiguousarray(xc).reshape(c, n * ho * wo)
    else:
        cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xc[:, :, i:i + s * ho:s, j:j + s * wo:s]
        cols = cols.reshape(c * k * k, n * ho * wo)
    wmat = weight.data.reshape(o, c * k * k)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, k, k, n, ho, wo)
            gxc = np.zeros(xc.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxc[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, i, j]
            if p:
                gxc = gxc[:, :, p:p + h, p:p + w]
            gx = np.ascontiguousarray(gxc.transpose(1, 0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._result(out, parents, backward)


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first cell in row-major order."""
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"max_pool2d: spatial dims {h}x{w} not divisible by window {window}")
    r = window
    blocks = x.data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // r, w // r, r * r)
    idx = blocks.argmax(axis=-1)
    _trace(idx)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
        gx = onehot.reshape(n, c, h // r, w // r, r, r).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor._result(np.ascontiguousarray(out), (x,), backward)


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i holds the interpolation weights of output sample i (half-pixel centers, edge clamped)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"resize_bilinear expects NCHW, got {x.shape}")
    _, _, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return Tensor._result(x.data.copy(), (x,), lambda g: (g,))
    mh = bilinear_matrix(h, out_h, x.dtype)
    mw = bilinear_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return Tensor._result(out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),))


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor}")
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_bilinear expects NCHW, got {x.shape}")
    return resize_bilinear(x, x.shape[2] * factor, x.shape[3] * factor)
