"""Minimal reverse-mode automatic differentiation on top of numpy.

Every tensor holds a float64 ndarray. Operations build the graph eagerly:
each non-leaf tensor remembers its parents and a closure mapping the
upstream gradient to one gradient per parent. ``Tensor.backward`` walks the
graph in reverse topological order and accumulates into leaf ``.grad``.

Broadcasting follows numpy; gradients are summed back to the operand shape.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

# graph recording is a per-thread switch so that graphs on separate threads stay independent
_local = threading.local()
# op name -> gradient multiplier; test hook used by gradcheck negative controls
_corrupted_ops: dict[str, float] = {}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def corrupt_backward(op: str, factor: float = 1.5):
    """Scale the backward rule of ``op`` by ``factor`` (negative-control hook)."""
    _corrupted_ops[op] = factor
    try:
        yield
    finally:
        _corrupted_ops.pop(op, None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- differentiation --------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Calling twice without zeroing adds the gradients again.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: loss must be a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

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

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            parent_grads = node._backward(g)
            factor = _corrupted_ops.get(node.op)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if factor is not None:
                    pg = pg * factor
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, p: float): return power(self, p)
    def __getitem__(self, idx): return index(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def max(self, axis=-1, keepdims=False): return max_reduce(self, axis, keepdims)[0]
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    @property
    def T(self): return transpose(self, None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def relu(self): return relu(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ---------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), backward, "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def atan2(y, x) -> Tensor:
    """Elementwise angle of (x, y); gradient set to zero where x = y = 0."""
    y, x = as_tensor(y), as_tensor(x)
    _broadcast_shape("atan2", y, x)
    out = np.arctan2(y.data, x.data)

    def backward(g):
        r2 = x.data ** 2 + y.data ** 2
        safe = np.where(r2 > 0, r2, 1.0)
        gy = np.where(r2 > 0, g * x.data / safe, 0.0)
        gx = np.where(r2 > 0, -g * y.data / safe, 0.0)
        return _unbroadcast(gy, y.shape), _unbroadcast(gx, x.shape)
    return _make(out, (y, x), backward, "atan2")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _make(out, (a, b), backward, "matmul")


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum.

    Every index of an operand must also appear in the other operand or in
    the output, which keeps the backward rule a pair of einsums.
    """
    a, b = as_tensor(a), as_tensor(b)
    ins, out_s = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb + out_s), (sb, sa + out_s)):
        if any(c not in other for c in s) or len(set(s)) != len(s):
            raise ValueError(f"einsum: unsupported subscripts {subscripts!r}")
    try:
        out = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError:
        raise ShapeError(f"einsum: incompatible shapes {a.shape} and {b.shape} for {subscripts!r}") from None

    def backward(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_s},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb
    return _make(out, (a, b), backward, "einsum")


# -- elementwise unary ----------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * a.data / safe, 0.0),)
    data = out if keepdims else np.squeeze(out, axis=axis)
    return _make(data, (a,), backward, "norm")


# -- reductions -----------------------------------------------------------
def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)
    return _make(out, (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,), "mean")


def max_reduce(a, axis: int = -1, keepdims: bool = False) -> tuple[Tensor, np.ndarray]:
    """Maximum along ``axis`` and the arg indices (first maximum on ties).

    The gradient is routed to the arg-max entry only.
    """
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx_k, g, axis=axis)
        return (grad,)
    return _make(out, (a,), backward, "max"), idx


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (a,), backward, "softmax")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv
    n = a.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gxm),)
    return _make(out, (a,), backward, "layernorm")


# -- shape and indexing ---------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is not None and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def index(a, idx) -> Tensor:
    """Basic or integer-array indexing; backward scatter-adds into the source."""
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        raise TypeError("index: indices must be integer arrays, not Tensors")
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise ShapeError(f"gather: {exc} (source shape {a.shape})") from None

    parts = idx if isinstance(idx, tuple) else (idx,)
    advanced = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def backward(g):
        grad = np.zeros_like(a.data)
        if advanced:
            np.add.at(grad, idx, g)
        else:
            grad[idx] += g
        return (grad,)
    return _make(np.array(out, dtype=DTYPE), (a,), backward, "gather")


def gather(a, indices, axis: int = 0) -> Tensor:
    """Select entries along ``axis`` by an integer index array of any shape.

    Indices are plain integer arrays, never part of the graph (detached);
    gradients scatter-add back into the selected source positions.
    """
    a = as_tensor(a)
    indices = np.asarray(indices)
    if indices.dtype.kind not in "iu":
        raise TypeError(f"gather: integer indices required, got {indices.dtype}")
    axis = axis % a.ndim
    n = a.shape[axis]
    if indices.size and (indices.min() < -n or indices.max() >= n):
        raise ShapeError(f"gather: index out of range for axis {axis} of shape {a.shape}")
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        if axis == 0:
            flat_g = g.reshape((-1,) + a.shape[1:])
            np.add.at(grad, indices.reshape(-1), flat_g)
        else:
            gm = np.moveaxis(grad, axis, 0)
            lead = indices.ndim
            gg = np.moveaxis(g, tuple(range(axis, axis + lead)), tuple(range(lead)))
            np.add.at(gm, indices.reshape(-1), gg.reshape((-1,) + gm.shape[1:]))
        return (grad,)
    return _make(out, (a,), backward, "gather")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in ts)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))
    return _make(out, ts, backward, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in ts], axis=axis)


def where(mask: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.data, b.data)
    return _make(out, (a, b), lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                                         _unbroadcast(np.where(mask, 0.0, g), b.shape)), "where")


# -- optimizer ------------------------------------------------------------
class Adam:
    """Adam with bias correction; moment buffers persist across steps.

    Args:
        params: leaf tensors to update in place.
        lr: step size, may be changed between steps via ``self.lr``.
        betas: exponential decay rates of the first and second moments.
        eps: denominator guard.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"Adam: lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"Adam: parameter {i} with shape {p.shape} has no gradient")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: Sequence[Tensor], lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, state: Adam | None = None) -> Adam:
    """Functional wrapper: apply one Adam update, creating state on first use."""
    if state is None:
        state = Adam(params, lr=lr, betas=betas, eps=eps)
    state.lr = lr
    state.step()
    return state
