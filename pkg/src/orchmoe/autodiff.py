"""Small reverse-mode autodiff over float64 numpy arrays.

Every op records its parents and a closure that maps the output adjoint to
input adjoints. ``backward`` replays the recorded graph in reverse topological
order, so each op is visited exactly once and fan-out accumulates additively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EvaluationError


@dataclass
class OpCounter:
    """Multiply-add counter for matmuls; used to check forward cost."""

    enabled: bool = False
    flops: int = 0
    shapes: list = field(default_factory=list)

    def reset(self) -> None:
        self.flops = 0
        self.shapes = []


op_counter = OpCounter()


class Tensor:
    """Dense float64 array that can sit on the gradient tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = ""):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = tuple(_parents)
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = _backward
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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
        if isinstance(other, Tensor):
            raise ContractError("tensor / tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Gradients: dA = dC @ B^T and dB = A^T @ dC, summed over broadcast axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    if op_counter.enabled:
        op_counter.flops += int(out.size) * a.shape[-1]
        op_counter.shapes.append((a.shape, b.shape))

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), _bw, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got shape {a.shape}")

    def _bw(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.swapaxes(a.data, -1, -2).copy(), (a,), _bw, "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), _bw, "reshape")


def take(a, index) -> Tensor:
    """Basic numpy indexing (ints, slices, Ellipsis)."""
    a = as_tensor(a)
    out = a.data[index]

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), _bw, "take")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), _bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def _bw(g):
        return (g * out,)

    return _make(out, (a,), _bw, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise EvaluationError("log of a non-positive entry")

    def _bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), _bw, "log")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    """Elementwise logistic function, branch-per-sign for stability."""
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)

    def _bw(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), _bw, "sigmoid")


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(x)) computed as -softplus(-x)."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def _bw(g):
        return (g * _stable_sigmoid(-x),)

    return _make(out, (a,), _bw, "log_sigmoid")


def softmax_rows(a, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis with per-row max subtraction.

    ``mask`` (boolean, same shape) restricts each row's support; masked-out
    entries come out as exact zeros.
    """
    a = as_tensor(a)
    x = a.data
    if mask is None:
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax mask shape {mask.shape} != input shape {x.shape}")
        if not np.all(mask.any(axis=-1)):
            raise ContractError("softmax mask leaves an empty row")
        shifted = np.where(mask, x, -np.inf)
        z = np.where(mask, x - shifted.max(axis=-1, keepdims=True), 0.0)
        e = np.where(mask, np.exp(z), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), _bw, "softmax_rows")


def stack_last(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors along a new trailing axis."""
    parts = [as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=-1)

    def _bw(g):
        return tuple(g[..., i] for i in range(len(parts)))

    return _make(out, tuple(parts), _bw, "stack")


def _topo_order(root: Tensor) -> list:
    order: list = []
    seen: set = set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad ancestor of a scalar loss.

    Leaf gradients accumulate into any existing ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    adjoints: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adjoints[key] = pg if key not in adjoints else adjoints[key] + pg


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ContractError("step h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(base))
        flat[i] = orig - h
        fm = float(f(base))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def parameters_with_grad(params: Iterable[Tensor]) -> list:
    return [p for p in params if p.requires_grad]
