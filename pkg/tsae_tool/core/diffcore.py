"""Minimal reverse-mode differentiation over numpy float64 arrays.

Every op returns a `DiffTensor` whose `_backward` closure scatters the
upstream gradient into its parents, in the style of small tape-free
autograd engines: the graph is the set of parent links, `backward()`
walks it in reverse topological order.
"""
from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from tsae_tool.errors import ContractError, DegenerateRowError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

_GRAD_ENABLED = True

ACTIVATIONS = ("tanh", "sigmoid", "relu", "linear")


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Ops evaluated inside the block record no parents and carry no gradient."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class DiffTensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"DiffTensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar over the module-level ops
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "DiffTensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "DiffTensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


TensorLike = DiffTensor | np.ndarray | float | int


def as_tensor(x: TensorLike) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def parameter(values, name: str = "") -> DiffTensor:
    return DiffTensor(values, requires_grad=True, name=name)


def record(values: np.ndarray, parents: Sequence[DiffTensor], backward_fn: Callable[[np.ndarray], None]) -> DiffTensor:
    """Wraps `values` as the output of an op; `backward_fn(grad_out)` must scatter into the parents."""
    out = DiffTensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def accumulate(t: DiffTensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------- elementwise arithmetic ----------
def add(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return record(a.values + b.values, (a, b), _backward)


def sub(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        accumulate(a, g)
        accumulate(b, -g)

    return record(a.values - b.values, (a, b), _backward)


def mul(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        accumulate(a, g * b.values)
        accumulate(b, g * a.values)

    return record(a.values * b.values, (a, b), _backward)


def div(a: TensorLike, b: TensorLike) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        accumulate(a, g / b.values)
        accumulate(b, -g * a.values / (b.values * b.values))

    return record(a.values / b.values, (a, b), _backward)


def square(x: TensorLike) -> DiffTensor:
    x = as_tensor(x)

    def _backward(g):
        accumulate(x, 2.0 * x.values * g)

    return record(x.values * x.values, (x,), _backward)


def log(x: TensorLike) -> DiffTensor:
    x = as_tensor(x)

    def _backward(g):
        accumulate(x, g / x.values)

    return record(np.log(x.values), (x,), _backward)


def clamp(x: TensorLike, low: float, high: float) -> DiffTensor:
    """Clips values; the gradient passes only where the input was inside [low, high]."""
    x = as_tensor(x)
    inside = (x.values >= low) & (x.values <= high)

    def _backward(g):
        accumulate(x, g * inside)

    return record(np.clip(x.values, low, high), (x,), _backward)


# ---------- shape ops ----------
def reshape(x: TensorLike, shape: tuple[int, ...]) -> DiffTensor:
    x = as_tensor(x)
    old = x.shape

    def _backward(g):
        accumulate(x, g.reshape(old))

    return record(x.values.reshape(shape), (x,), _backward)


def transpose(x: TensorLike, axes: tuple[int, ...] | None = None) -> DiffTensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def _backward(g):
        accumulate(x, g.transpose(inverse))

    return record(x.values.transpose(axes), (x,), _backward)


def getitem(x: TensorLike, index) -> DiffTensor:
    x = as_tensor(x)

    def _backward(g):
        full = np.zeros_like(x.values)
        np.add.at(full, index, g)
        accumulate(x, full)

    return record(x.values[index], (x,), _backward)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> DiffTensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractError("concat needs at least one tensor")
    axis = axis % parts[0].ndim
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _backward(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            accumulate(p, piece)

    return record(np.concatenate([p.values for p in parts], axis=axis), parts, _backward)


def reduce_sum(x: TensorLike, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)

    def _backward(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = sorted(a % x.ndim for a in axes)
            for a in axes:
                g = np.expand_dims(g, a)
        accumulate(x, np.broadcast_to(g, x.shape))

    return record(np.asarray(x.values.sum(axis=axis, keepdims=keepdims)), (x,), _backward)


def reduce_mean(x: TensorLike, axis=None, keepdims: bool = False) -> DiffTensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------- linear algebra ----------
def matmul(a: TensorLike, b: TensorLike) -> DiffTensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")

    def _backward(g):
        accumulate(a, g @ np.swapaxes(b.values, -1, -2))
        accumulate(b, np.swapaxes(a.values, -1, -2) @ g)

    return record(a.values @ b.values, (a, b), _backward)


def softmax_rows(x: TensorLike) -> DiffTensor:
    """Softmax over the last axis. -inf entries (mask sentinels) map to exactly 0."""
    x = as_tensor(x)
    if np.isneginf(x.values).all(axis=-1).any():
        raise DegenerateRowError("softmax row is entirely -inf (every position masked)")
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        accumulate(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return record(y, (x,), _backward)


def elementwise(x: TensorLike, fn: str) -> DiffTensor:
    x = as_tensor(x)
    if fn == "linear":
        return x
    if fn == "tanh":
        y = np.tanh(x.values)
        deriv = 1.0 - y * y
    elif fn == "sigmoid":
        y = expit(x.values)
        deriv = y * (1.0 - y)
    elif fn == "relu":
        y = np.maximum(x.values, 0.0)
        deriv = (x.values > 0).astype(np.float64)
    else:
        raise ContractError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")

    def _backward(g):
        accumulate(x, g * deriv)

    return record(y, (x,), _backward)


def layer_norm(x: TensorLike, gain: TensorLike, bias: TensorLike, eps: float = 1e-5) -> DiffTensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    centered = x.values - x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def _backward(g):
        accumulate(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        accumulate(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.values
            dx = inv_std / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            accumulate(x, dx)

    return record(xhat * gain.values + bias.values, (x, gain, bias), _backward)


def frobenius(x: TensorLike, axes: tuple[int, ...]) -> DiffTensor:
    """sqrt(sum(x**2)) over `axes`; the subgradient at a zero residual is 0."""
    x = as_tensor(x)
    norm = np.sqrt((x.values * x.values).sum(axis=axes, keepdims=True))

    def _backward(g):
        g = np.expand_dims(g, axes) if g.ndim < x.ndim else g
        safe = np.where(norm > 0, norm, 1.0)
        accumulate(x, np.where(norm > 0, x.values / safe, 0.0) * g)

    return record(np.squeeze(norm, axis=axes), (x,), _backward)


def dropout(x: TensorLike, rate: float, rng: np.random.Generator | None) -> DiffTensor:
    x = as_tensor(x)
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def _backward(g):
        accumulate(x, g * keep)

    return record(x.values * keep, (x,), _backward)


def conv1d(x: TensorLike, w: TensorLike, b: TensorLike, pad_left: int, pad_right: int) -> DiffTensor:
    """Stride-1 cross-correlation. x: (batch, c_in, L), w: (c_out, c_in, s), b: (c_out,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d shape mismatch: input {x.shape}, kernel {w.shape}")
    s = w.shape[2]
    length = x.shape[2]
    padded = np.pad(x.values, ((0, 0), (0, 0), (pad_left, pad_right)))
    if padded.shape[2] < s:
        raise ShapeError(f"conv1d input of length {length} is shorter than kernel size {s}")
    windows = sliding_window_view(padded, s, axis=2)  # (batch, c_in, L_out, s)
    out_len = windows.shape[2]
    y = np.tensordot(windows, w.values, axes=([1, 3], [1, 2])).transpose(0, 2, 1) + b.values[None, :, None]

    def _backward(g):
        accumulate(b, g.sum(axis=(0, 2)))
        accumulate(w, np.tensordot(g, windows, axes=([0, 2], [0, 2])))
        if x.requires_grad:
            gpad = np.zeros_like(padded)
            for j in range(s):
                gpad[:, :, j : j + out_len] += np.tensordot(g, w.values[:, :, j], axes=([1], [0])).transpose(0, 2, 1)
            accumulate(x, gpad[:, :, pad_left : pad_left + length])

    return record(np.ascontiguousarray(y), (x, w, b), _backward)


# ---------- reverse pass ----------
def _topological_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: DiffTensor) -> None:
    """Populates `.grad` on every reachable leaf with requires_grad. Leaf grads accumulate across calls."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological_order(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(
    build_loss: Callable[[object], DiffTensor],
    params,
    eps: float = 1e-5,
) -> float:
    """Max relative error between backward() and central differences over every coordinate of `params`."""
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps={eps} outside [1e-7, 1e-3]")
    params.zero_grad()
    loss = build_loss(params)
    if not np.isfinite(loss.values).all():
        raise NumericalError("loss is not finite at the unperturbed point")
    backward(loss)

    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            with no_grad():
                flat[i] = original + eps
                plus = build_loss(params).item()
                flat[i] = original - eps
                minus = build_loss(params).item()
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (plus - minus) / (2.0 * eps)
            a = float(flat_grad[i])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
                logger.debug("grad_check %s[%d]: analytic=%.6e numeric=%.6e err=%.3e", name, i, a, numeric, err)
    params.zero_grad()
    return worst
