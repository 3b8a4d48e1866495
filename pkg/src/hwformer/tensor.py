"""A small dense tensor with reverse-mode automatic differentiation.

Every ``Tensor`` wraps a numpy array. Operations that touch a tensor with
``requires_grad=True`` record their parents and a vector-Jacobian closure;
``Tensor.backward`` walks that graph in reverse topological order exactly
once and then releases it.

Only the primitives the denoiser needs are provided. Convolution, layer
normalization and softmax are fused kernels with hand-written backward
passes; everything spatial (rolls, padding, window tiling, dilated
neighbourhoods) is expressed through ``take``, ``reshape``, ``transpose``
and basic slicing.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, NumericError, UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_released", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self._released = False
        self.op = "leaf"

    # -- introspection -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op, recording the graph if needed."""
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), vjp, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        scale = b

        def vjp_scalar(g):
            return (g * scale,)

        return _make(a.data * scale, (a,), vjp_scalar, "scale")
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)

    return _make(ad * bd, (a, b), vjp, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), vjp, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing."""
    shape, dtype = x.shape, x.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        full[key] = g
        return (full,)

    return _make(x.data[key], (x,), vjp, "slice")


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; indices may repeat (gradients accumulate)."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    shape, dtype = x.shape, x.dtype
    flat = idx.reshape(-1)
    unique = np.unique(flat).size == flat.size
    lead = (slice(None),) * axis

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        if idx.ndim != 1:
            g = g.reshape(shape[:axis] + (flat.size,) + shape[axis + 1:])
        if unique:
            full[lead + (flat,)] = g
        else:
            np.add.at(full, lead + (flat,), g)
        return (full,)

    return _make(np.take(x.data, idx, axis=axis), (x,), vjp, "take")


def pad_zeros(x: Tensor, pads) -> Tensor:
    """Constant zero padding; ``pads`` is a sequence of (before, after)."""
    pads = tuple(tuple(p) for p in pads)
    key = tuple(slice(b, b + n) for (b, _), n in zip(pads, x.shape))
    return _make(np.pad(x.data, pads), (x,), lambda g: (g[key],), "pad")


# ---------------------------------------------------------------------------
# linear algebra and fused kernels
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ConfigError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    return _make(ad @ bd, (a, b), vjp, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ConfigError(f"layer_norm affine parameters must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        gxhat = g * gd
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + beta.data, (x, gamma, beta), vjp, "layer_norm")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, padding: Optional[int] = None) -> Tensor:
    """Stride-1 'same' convolution with zero padding (im2col + tensordot)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigError("conv2d expects input (N,C,H,W) and weight (Cout,Cin,k,k)")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ConfigError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if kh != kw or kh % 2 == 0:
        raise ConfigError("conv2d kernels must be square with odd extent")
    k = kh
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ConfigError("conv2d only supports same-size padding (k-1)/2")
    if bias is not None and bias.shape != (cout,):
        raise ConfigError("conv2d bias must have shape (Cout,)")
    if not np.isfinite(x.data).all():
        raise NumericError("conv2d received non-finite input")

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,Cin,H,W,k,k
    wd = weight.data
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def vjp(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, wd, axes=([1], [0]))  # N,H,W,Cin,k,k
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + h, j:j + w] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + h, p:p + w]
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, lambda g: vjp(g)[: len(parents)], "conv2d")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _topological(root: Tensor) -> list:
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
        if node._released:
            raise UsageError("graph was already consumed by an earlier backward(); recompute the forward pass")
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it, then release the graph."""
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    if loss._released:
        raise UsageError("backward() was already called on this graph")
    order = _topological(loss)
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._vjp = None
            node._released = True


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x,
    h: float = 1e-6,
    coords: Optional[Sequence[int]] = None,
) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``coords`` restricts the check to selected flat indices of ``x``;
    by default every coordinate is perturbed.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    value = f(leaf)
    if not np.isfinite(value.data).all():
        raise NumericError("f(x) is not finite")
    value.backward()
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad
    analytic = analytic.reshape(-1)

    if coords is None:
        coords = range(base.size)
    worst = 0.0
    with no_grad():
        for c in coords:
            bumped = base.copy().reshape(-1)
            bumped[c] += h
            up = f(Tensor(bumped.reshape(base.shape))).item()
            bumped[c] -= 2 * h
            down = f(Tensor(bumped.reshape(base.shape))).item()
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("f is not finite near x")
            numeric = (up - down) / (2 * h)
            a = analytic[c]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
