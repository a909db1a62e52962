"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every tensor is a float64 array of shape (N, C, H, W).  Scalars are
(1, 1, 1, 1) and vectors are stored as (N, C, 1, 1), so a dense layer is just
a 1x1 convolution.

An operation whose inputs require gradients records its parents and a
backward rule on the output tensor.  :func:`backward` walks the recorded
graph in reverse topological order (the *tape*) and accumulates gradients
into every reachable tensor that requires them.  Gradients accumulate across
calls until :meth:`Tensor.zero_grad`.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (per thread)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N, C, H, W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.full((1, 1, 1, 1), float(x)))
    return Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` as an op output and put it on the tape when needed.

    ``backward_fn(g)`` receives the output gradient and returns one array (or
    ``None``) per parent.
    """
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Tape:
    """Recorded operations reachable from an output, in topological order."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order, seen = [], set()
        stack = [(out, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable ``t``."""
    if loss.shape != (1, 1, 1, 1):
        raise ContractError(f"backward needs a scalar (1,1,1,1) loss, got {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (nothing requires grad)")
    tape = Tape.from_output(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g if node.grad is None else node.grad + g
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if not np.isfinite(pg).all():
                raise NonFiniteError(f"backward of {node.op} produced non-finite values")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(tensors: Iterable[Tensor]):
    for t in tensors:
        t.grad = None


# --- construction -----------------------------------------------------------

def create_tensor(shape, init: str = "zeros", *, value: float = 0.0, rng=None,
                  lo: float = 0.0, hi: float = 1.0, fan_in: int | None = None,
                  requires_grad: bool = False) -> Tensor:
    """New tensor filled with ``zeros``, ``constant``, ``uniform`` or ``he_normal``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or any(s < 0 for s in shape):
        raise ShapeError(f"shape must be four non-negative ints, got {shape}")
    n = 1
    for s in shape:
        n *= s
    if n > np.iinfo(np.intp).max // 8:
        raise ShapeError(f"tensor of shape {shape} exceeds the addressable size")
    if init == "zeros":
        data = np.zeros(shape)
    elif init == "constant":
        data = np.full(shape, float(value))
    elif init == "uniform":
        if rng is None:
            raise ContractError("uniform init needs an rng")
        data = rng.uniform(lo, hi, n).reshape(shape) if n else np.zeros(shape)
    elif init == "he_normal":
        if rng is None or fan_in is None or fan_in <= 0:
            raise ContractError("he_normal init needs an rng and fan_in > 0")
        data = (rng.normal(n) * np.sqrt(2.0 / fan_in)).reshape(shape) if n else np.zeros(shape)
    else:
        raise ContractError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


# --- elementwise ------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return record(a.data * k, (a,), lambda g: (g * k,), "scale")


def elementwise(op: str, a: Tensor, b: Tensor | None = None, k: float | None = None) -> Tensor:
    """Dispatch ``add``/``sub``/``mul`` (binary) or ``scale`` (by ``k``)."""
    if op == "scale":
        if k is None:
            raise ContractError("scale needs a factor k")
        return scale(a, k)
    if b is None:
        raise ContractError(f"{op} needs two operands")
    fn = {"add": add, "sub": sub, "mul": mul}.get(op)
    if fn is None:
        raise ContractError(f"unknown elementwise op {op!r}")
    return fn(a, b)


def absolute(a: Tensor) -> Tensor:
    """|a| with subgradient 0 at 0."""
    sign = np.sign(a.data)
    return record(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return record(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = np.exp(-np.logaddexp(0.0, -a.data))
    return record(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax_channels(a: Tensor) -> Tensor:
    """Softmax over C independently at every (n, h, w)."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return record(s, (a,), bw, "softmax_channels")


# --- reductions and structure -------------------------------------------------

_REDUCE_AXES = {"all": (0, 1, 2, 3), "spatial": (2, 3), "channels": (1,)}


def reduce(op: str, a: Tensor, over: str = "all") -> Tensor:
    """``sum``/``mean`` over ``all`` -> (1,1,1,1), ``spatial`` -> (N,C,1,1),
    or ``channels`` -> (N,1,H,W)."""
    axes = _REDUCE_AXES.get(over)
    if axes is None:
        raise ContractError(f"unknown reduction domain {over!r}")
    count = int(np.prod([a.shape[i] for i in axes]))
    if op == "sum":
        out = a.data.sum(axis=axes, keepdims=True)
        factor = 1.0
    elif op == "mean":
        if count == 0:
            raise ContractError("mean of an empty tensor")
        out = a.data.sum(axis=axes, keepdims=True) / count
        factor = 1.0 / count
    else:
        raise ContractError(f"unknown reduction {op!r}")
    shape = a.shape
    return record(out, (a,), lambda g: (np.broadcast_to(g * factor, shape),), f"{op}_{over}")


def sum_(a: Tensor, over: str = "all") -> Tensor:
    return reduce("sum", a, over)


def mean(a: Tensor, over: str = "all") -> Tensor:
    return reduce("mean", a, over)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * 4
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)] if t.requires_grad else None)
        return out

    return record(data, tensors, bw, "concat")


def channel_slice(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return record(a.data[:, start:stop].copy(), (a,), bw, "channel_slice")
