"""Minimal reverse-mode autodiff over numpy arrays.

Only the operators the enhancement network needs are provided. Every node
records its parents and a closure that pushes the upstream gradient into
them; :meth:`Tensor.backward` walks the recorded graph in reverse
topological order exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


class Tensor:
    """An n-d array that can take part in reverse-mode differentiation.

    Leaves created by the user carry ``requires_grad``; results of operators
    on such leaves keep a reference to their parents so gradients can be
    propagated back. ``grad`` stays ``None`` until a backward pass reaches
    the tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` of every reachable tensor that requires it.

        Gradients accumulate, so a leaf used twice receives both
        contributions and repeated calls add up.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # python scalars adopt the dtype of the tensor operand
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        )

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(-g * out_data / b.data, b.shape) if b.requires_grad else None),
        )

    return _make(out_data, (a, b), backward, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    def backward(g):
        return ((x, g * exponent * x.data ** (exponent - 1)),)

    return _make(x.data**exponent, (x,), backward, "pow")


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)

    def backward(g):
        return ((x, g * 0.5 / out_data),)

    return _make(out_data, (x,), backward, "sqrt")


def log(x: Tensor) -> Tensor:
    def backward(g):
        return ((x, g / x.data),)

    return _make(np.log(x.data), (x,), backward, "log")


def tabs(x: Tensor) -> Tensor:
    def backward(g):
        return ((x, g * np.sign(x.data)),)

    return _make(np.abs(x.data), (x,), backward, "abs")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out_data[~pos] = e / (1.0 + e)

    def backward(g):
        return ((x, g * out_data * (1.0 - out_data)),)

    return _make(out_data, (x,), backward, "sigmoid")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero where the clamp is active."""
    out_data = np.clip(x.data, lo, hi)

    def backward(g):
        return ((x, g * ((x.data >= lo) & (x.data <= hi))),)

    return _make(out_data, (x,), backward, "clip")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """x where x > 0 else slope * x. The subgradient at exactly 0 is ``slope``."""
    pos = x.data > 0

    def backward(g):
        return ((x, np.where(pos, g, g * slope)),)

    return _make(np.where(pos, x.data, x.data * slope), (x,), backward, "leaky_relu")


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` holds, else ``b``. The mask is a constant."""
    a, b = _pair(a, b)
    shape = np.broadcast_shapes(mask.shape, a.shape, b.shape)
    m = np.broadcast_to(mask, shape)

    def backward(g):
        return (
            (a, _unbroadcast(np.where(m, g, 0), a.shape)),
            (b, _unbroadcast(np.where(m, 0, g), b.shape)),
        )

    return _make(np.where(m, a.data, b.data), (a, b), backward, "where")


# -- shape and reduction -----------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.shape)),)

    return _make(np.asarray(out_data), (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(np.asarray(out_data).size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g / count, x.shape)),)

    return _make(np.asarray(out_data), (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        return ((x, g.reshape(x.shape)),)

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(x.data)
        if _fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        return ((x, full),)

    return _make(x.data[index], (x,), backward, "getitem")


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append((t, g[tuple(sl)]))
        return out

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tensors, backward, "concat")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two (n, c, h, w) tensors along the channel axis, ``a`` first."""
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError(f"concat_channels needs 4-D tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ValueError(f"concat_channels shape mismatch: {a.shape} vs {b.shape}")
    return concat([a, b], axis=1)


# -- network operators -------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding.

    x: (n, c, h, w); weight: (o, c, kh, kw); bias: (o,).
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}"
        )
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"conv2d output would be empty: input {x.shape}, weight {weight.shape}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # patches laid out (n, c, kh, kw, oh, ow) so the product lands in NCHW order
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    cols = cols.reshape(n, c * kh * kw, oh * ow)
    wmat = weight.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out_data = out.reshape(n, o, oh, ow)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = g.reshape(n, o, oh * ow)
        res = []
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g3).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
            dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
            res.append((x, dx))
        if weight.requires_grad:
            dw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
            res.append((weight, dw.reshape(weight.shape)))
        if bias is not None and bias.requires_grad:
            res.append((bias, g3.sum(axis=(0, 2))))
        return res

    return _make(out_data, parents, backward, "conv2d")


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise each (sample, channel) plane over its spatial positions."""
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return ((x, inv * (g - gm - xhat * gxm)),)

    return _make(xhat, (x,), backward, "instance_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, c) spatial means."""
    hw = x.shape[2] * x.shape[3]

    def backward(g):
        return ((x, np.broadcast_to(g[:, :, None, None] / hw, x.shape)),)

    return _make(x.data.mean(axis=(2, 3)), (x,), backward, "global_avg_pool")


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W.T + b`` for x of shape (n, d_in) or (d_in,)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"fully_connected dimension mismatch: input {x.shape}, weight {weight.shape}"
        )
    squeeze = x.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g[None, :] if squeeze else g
        res = []
        if x.requires_grad:
            dx = g2 @ weight.data
            res.append((x, dx[0] if squeeze else dx))
        if weight.requires_grad:
            res.append((weight, g2.T @ xd))
        if bias is not None and bias.requires_grad:
            res.append((bias, g2.sum(axis=0)))
        return res

    return _make(out[0] if squeeze else out, parents, backward, "fully_connected")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Replicate each pixel into a factor x factor block."""
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out_data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return ((x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))),)

    return _make(out_data, (x,), backward, "upsample_nearest")


def backward(loss: Tensor) -> None:
    """Functional spelling of ``loss.backward()``."""
    loss.backward()


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
