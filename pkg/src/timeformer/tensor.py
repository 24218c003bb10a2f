"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive returns a new :class:`Tensor` and, when any input tracks
gradients, records a closure that maps the output gradient to input
gradients. :meth:`Tensor.backward` walks the recorded graph in reverse
topological order and then releases it, so a graph can be consumed once.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ConfigurationError, NonFiniteError

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


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_released", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._released = False
        self.name = name

    # ------------------------------------------------------------------ basics
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

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            raise NonFiniteError(f"{what} contains {bad} non-finite value(s)")
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ---------------------------------------------------------------- autodiff
    def backward(self) -> None:
        """Populate ``grad`` on every gradient-tracking tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._released:
            raise ContractError("backward() called twice on the same graph; rebuild it with a new forward pass")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that tracks gradients")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._released = True
        self._released = True

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


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


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ------------------------------------------------------------------ elementwise
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), backward)


ACTIVATIONS = {"relu": relu, "gelu": gelu}


# ----------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    if count == 0:
        raise DimensionError(f"mean over empty axes of shape {a.shape}")
    return scale(sum_(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- shape ops
def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} into {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),))


def flatten(a: Tensor, start_dim: int = 0) -> Tensor:
    """Merge all axes from ``start_dim`` onward (row-major)."""
    start = start_dim % a.ndim if a.ndim else 0
    return reshape(a, a.shape[:start] + (-1,))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if not axes:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(a_ % a.ndim for a_ in axes) != list(range(a.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {a.shape}")
    axes = tuple(a_ % a.ndim for a_ in axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise DimensionError(f"transpose_last2 needs ndim >= 2, got shape {a.shape}")
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc} (shapes {[t.shape for t in tensors]})") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), backward)


def slice_(a: Tensor, key) -> Tensor:
    shape = a.shape
    out = a.data[key]

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (a,), backward)


def pad_front(a: Tensor, count: int, axis: int) -> Tensor:
    """Prepend ``count`` zeros along ``axis``."""
    if count == 0:
        return a
    shape = list(a.shape)
    shape[axis] = count
    return concat([Tensor(np.zeros(shape)), a], axis=axis)


# --------------------------------------------------------------- linear algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last dimension, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def modulated_softmax(x: Tensor, factor: Optional[np.ndarray] = None, keep: Optional[np.ndarray] = None) -> Tensor:
    """``softmax(x) * factor`` over the last axis in one pass.

    ``keep`` (boolean, broadcastable) restricts each row's softmax to the kept
    entries; dropped entries come out exactly zero and never influence the
    kept ones, whatever their value.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last dimension, got shape {x.shape}")
    data = x.data
    if keep is None:
        e = data - data.max(axis=-1, keepdims=True)
    else:
        e = data - np.max(data, axis=-1, keepdims=True, where=keep, initial=-np.inf)
        np.copyto(e, -np.inf, where=~keep)
    np.exp(e, out=e)
    inv = 1.0 / e.sum(axis=-1, keepdims=True)
    track = _GRAD_ENABLED and x.requires_grad
    if not track:
        if factor is not None:
            e *= factor
        e *= inv
        return Tensor(e)
    probs = e * inv
    y = probs if factor is None else probs * factor

    def backward(g):
        gs = g if factor is None else g * factor
        return (probs * (gs - (gs * probs).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


# -------------------------------------------------------------- sequence ops
def avg_pool1d(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Average pooling along the last axis without padding; the remainder is dropped."""
    if kernel < 1 or stride < 1:
        raise ConfigurationError(f"kernel and stride must be >= 1, got {kernel}, {stride}")
    length = x.shape[-1] if x.ndim else 0
    if length < kernel:
        raise DimensionError(f"avg_pool1d: length {length} < kernel {kernel}")
    n_out = (length - kernel) // stride + 1
    starts = np.arange(n_out) * stride
    idx = starts[:, None] + np.arange(kernel)[None, :]
    out = x.data[..., idx].mean(axis=-1)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        share = g / kernel
        for j in range(kernel):
            full[..., starts + j] += share
        return (full,)

    return _make(out, (x,), backward)


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Same-length 1-D convolution (cross-correlation) over ``x[..., L, C_in]``.

    ``w`` has shape ``[kernel, C_in, C_out]`` and the input is zero padded by
    ``(kernel - 1) / 2`` on each side, so ``kernel`` must be odd.
    """
    if w.ndim != 3:
        raise DimensionError(f"conv1d weight must be [kernel, C_in, C_out], got {w.shape}")
    k, c_in, c_out = w.shape
    if k % 2 == 0:
        raise ConfigurationError(f"conv1d kernel must be odd, got {k}")
    if x.ndim < 2 or x.shape[-1] != c_in:
        raise DimensionError(f"conv1d input {x.shape} does not end in C_in={c_in}")
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"conv1d bias must be ({c_out},), got {b.shape}")
    length = x.shape[-2]
    pad = (k - 1) // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    cols = np.stack([xp[..., j:j + length, :] for j in range(k)], axis=-2)  # [..., L, k, C_in]
    cols2 = cols.reshape(cols.shape[:-2] + (k * c_in,))
    wmat = w.data.reshape(k * c_in, c_out)
    out = cols2 @ wmat
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            dcols = (g @ wmat.T).reshape(cols.shape)
            dxp = np.zeros(xp.shape)
            for j in range(k):
                dxp[..., j:j + length, :] += dcols[..., j, :]
            gx = dxp[..., pad:pad + length, :]
        if w.requires_grad:
            flat_cols = cols2.reshape(-1, k * c_in)
            gw = (flat_cols.T @ g.reshape(-1, c_out)).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.reshape(-1, c_out).sum(axis=0)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, backward)


def batchnorm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-6,
) -> Tensor:
    """Batch normalization over the trailing feature axis.

    Statistics pool every axis except the last. In training mode the batch
    statistics are used and ``running_mean``/``running_var`` are updated in
    place (unbiased variance, as is conventional); in eval mode only the
    running statistics are used.
    """
    if x.ndim < 1 or x.shape[0] == 0:
        raise DimensionError(f"batchnorm needs a non-empty batch axis, got shape {x.shape}")
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"batchnorm affine params must be ({d},)")
    axes = tuple(range(x.ndim - 1))
    count = x.data.size // d if d else 0
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * count / (count - 1) if count > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    gamma = weight.data
    out = xhat * gamma + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma
            if training:
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xhat).sum(axis=axes)
                gx = inv_std * (dxhat - s1 / count - xhat * s2 / count)
            else:
                gx = dxhat * inv_std
        gw = (g * xhat).sum(axis=axes) if weight.requires_grad else None
        gb = g.sum(axis=axes) if bias.requires_grad else None
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
