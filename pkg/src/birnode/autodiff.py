"""Dense float64 tensors with a dynamic reverse-mode gradient tape.

Every primitive returns a new :class:`Tensor`.  When at least one input
requires a gradient the output keeps references to its inputs together with
a closure mapping the output adjoint to input adjoints.  :func:`backward`
orders the reachable graph topologically (the *tape*) and replays the
closures in reverse.

The graph is rebuilt on every forward pass, so variable-length sequences and
variable solver step counts need no special handling.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import ContractError, DimensionError

__all__ = [
    "Tensor",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "build_tape",
    "zero_grads",
    "tensor",
    "parameter",
    "no_grad",
    "take",
    "add",
    "sub",
    "mul",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "softmax",
    "log_softmax",
    "log",
    "concat",
    "slice_",
    "sum_",
    "mean",
    "scale",
]


class Tensor:
    """A node in the gradient graph.

    ``data`` is always a float64 ndarray.  ``grad`` is ``None`` until a
    backward pass reaches the tensor (or :func:`zero_grads` is called).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf that participates in optimisation."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_state = threading.local()


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording in the current thread."""
    prev = getattr(_state, "disabled", False)
    _state.disabled = True
    try:
        yield
    finally:
        _state.disabled = prev


def _record(out_data, inputs: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    out = Tensor(out_data)
    out.op = op
    if getattr(_state, "disabled", False):
        return out
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._parents = tuple(inputs)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data + b.data, (a, b), "add", lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record(
        a.data - b.data, (a, b), "sub", lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _record(ad * bd, (a, b), "mul", bw)


def scale(a, c: float) -> Tensor:
    """Multiply by a constant scalar ``c``."""
    a = _as_tensor(a)
    c = float(c)
    return _record(a.data * c, (a,), "scale", lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return _record(ad @ bd, (a, b), "matmul", bw)


# -- elementwise unary --------------------------------------------------------


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(a.data)
    return _record(y, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    m = a.data > 0
    return _record(np.where(m, a.data, 0.0), (a,), "relu", lambda g: (g * m,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    return _record(np.log(x), (a,), "log", lambda g: (g / x,))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (a,), "softmax", bw)


def log_softmax(a) -> Tensor:
    """Numerically stable ``log(softmax(a))`` over the last axis."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _record(y, (a,), "log_softmax", bw)


# -- structural ---------------------------------------------------------------


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat: no inputs")
    nd = ts[0].data.ndim
    ax = axis % nd
    for t in ts[1:]:
        other = [n for i, n in enumerate(t.shape) if i != ax]
        first = [n for i, n in enumerate(ts[0].shape) if i != ax]
        if t.data.ndim != nd or other != first:
            raise DimensionError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        idx = [slice(None)] * nd
        out = []
        for i in range(len(ts)):
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return _record(np.concatenate([t.data for t in ts], axis=ax), ts, "concat", bw)


def slice_(a, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    a = _as_tensor(a)
    nd = a.data.ndim
    ax = axis % nd
    n = a.shape[ax]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"slice: range [{start}:{stop}] invalid for shape {a.shape}")
    idx = [slice(None)] * nd
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _record(a.data[idx], (a,), "slice", bw)


def take(a, index) -> Tensor:
    """Gather rows ``a[index]`` along axis 0."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise DimensionError(f"take: index out of range for shape {a.shape}")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record(a.data[index], (a,), "take", bw)


def sum_(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(a.data.sum(axis=axis), (a,), "sum", bw)


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]

    def bw(g):
        if axis is None:
            return (np.full(shape, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / n,)

    return _record(a.data.mean(axis=axis), (a,), "mean", bw)


PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "log": log,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "slice": slice_,
    "sum": sum_,
    "mean": mean,
    "scale": scale,
    "take": take,
}


def apply_primitive(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Apply a named primitive to ``inputs``; extra keywords go to the primitive.

    >>> apply_primitive("matmul", [[[1, 2], [3, 4]], [[1], [1]]]).data.tolist()
    [[3.0], [7.0]]
    """
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    if kind == "scale":
        (a,) = inputs
        return scale(a, kwargs["factor"])
    return fn(*inputs, **kwargs)


# -- reverse pass ---------------------------------------------------------------


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered nodes reachable from ``root`` (inputs first)."""
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    Calling twice without :func:`zero_grads` adds the gradients again.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor requiring grad")
    tape = build_tape(loss)
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            k = id(parent)
            if k in adj:
                adj[k] = adj[k] + pg
            else:
                adj[k] = pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)
