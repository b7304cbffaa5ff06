"""Reverse-mode automatic differentiation over float64 numpy arrays.

Two surfaces:

* An eager tape: `Tensor` values record the op that produced them, and
  `Tensor.backward()` accumulates gradients into every reachable node.
  Model code uses this directly (operators + the primitive functions below).
* A replayable `ComputationGraph` of primitive-op records with named inputs,
  parameters and outputs, executed by `evaluate` / `backward`.  The graph is
  topologically ordered by construction and runs on the same eager tape.

The primitive set is fixed: add, sub, mul, matmul, transpose, reshape,
concat, slice, sum, mean, relu, gelu, sigmoid, tanh, softmax (last axis),
layer_norm (last axis), broadcast, sqrt.  Everything else composes from
these.  (sqrt is needed by the per-joint Euclidean training loss and cannot
be composed from the rest.)
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus the tape record that produced it.

    External data is validated at construction: NaN/Inf inputs are rejected.
    Results of primitive ops skip that check (training watches for non-finite
    losses explicitly).
    """

    __slots__ = ("data", "grad", "op", "_parents", "_vjp")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ShapeError("tensor construction rejected non-finite entries")
        self.data = arr
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._vjp = None

    @classmethod
    def _result(cls, data: np.ndarray, op: str, parents, vjp) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled:
            out.op = op
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.op = op
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-mode accumulation from this scalar into `.grad` fields."""
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar output, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None:
                continue
            gs = node._vjp(node.grad)
            for parent, g in zip(node._parents, gs):
                if g is None:
                    continue
                # grads are never mutated in place, so views are safe here
                parent.grad = g if parent.grad is None else parent.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a gradient back to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# primitive ops -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._result(data, "add", (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._result(data, "sub", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._result(data, "mul", (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul requires rank >= 2 operands, got {a.data.shape} @ {b.data.shape}"
        )
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(
            f"matmul shapes incompatible: {a.data.shape} @ {b.data.shape}"
        ) from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._result(data, "matmul", (a, b), vjp)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes_t = tuple(range(a.data.ndim))[::-1] if axes is None else tuple(axes)
    data = np.transpose(a.data, axes_t)
    inv = np.argsort(axes_t)

    def vjp(g):
        return (np.transpose(g, inv),)

    return Tensor._result(data, "transpose", (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = np.reshape(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.data.shape} to {tuple(shape)}") from exc
    in_shape = a.data.shape

    def vjp(g):
        return (np.reshape(g, in_shape),)

    return Tensor._result(data, "reshape", (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat shapes incompatible along axis {axis}") from exc
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return Tensor._result(data, "concat", ts, vjp)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    a = _as_tensor(a)
    n = a.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}:{stop}) out of range for axis {axis} of size {n}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    data = a.data[sl]
    in_shape = a.data.shape

    def vjp(g):
        out = np.zeros(in_shape, dtype=np.float64)
        out[sl] = g
        return (out,)

    return Tensor._result(data, "slice", (a,), vjp)


def _restore_reduced(g: np.ndarray, in_shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, in_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(in_shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, in_shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def vjp(g):
        return (_restore_reduced(g, in_shape, axis, keepdims).copy(),)

    return Tensor._result(np.asarray(data), "sum", (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    in_shape = a.data.shape
    count = a.data.size / max(np.asarray(data).size, 1)

    def vjp(g):
        return (_restore_reduced(g, in_shape, axis, keepdims) / count,)

    return Tensor._result(np.asarray(data), "mean", (a,), vjp)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return Tensor._result(data, "relu", (a,), vjp)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    data = 0.5 * x * (1.0 + th)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x**2)
        deriv = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner
        return (g * deriv,)

    return Tensor._result(data, "gelu", (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return Tensor._result(data, "sigmoid", (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data**2),)

    return Tensor._result(data, "tanh", (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / data,)

    return Tensor._result(data, "sqrt", (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * data, axis=-1, keepdims=True)
        return ((g - dot) * data,)

    return Tensor._result(data, "softmax", (a,), vjp)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mu = np.mean(a.data, axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc**2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def vjp(g):
        gm = np.mean(g, axis=-1, keepdims=True)
        gy = np.mean(g * data, axis=-1, keepdims=True)
        return ((g - gm - data * gy) * inv,)

    return Tensor._result(data, "layer_norm", (a,), vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.data.shape} to {tuple(shape)}") from exc
    in_shape = a.data.shape

    def vjp(g):
        return (_unbroadcast(g, in_shape),)

    return Tensor._result(data, "broadcast", (a,), vjp)


OP_TABLE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "concat": concat,
    "slice": narrow,
    "sum": sum_,
    "mean": mean,
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "layer_norm": layer_norm,
    "broadcast": broadcast_to,
    "sqrt": sqrt,
}


# replayable graphs ----------------------------------------------------------

@dataclass(frozen=True)
class NodeRef:
    graph: "ComputationGraph" = field(repr=False, compare=False)
    index: int


@dataclass
class _Record:
    kind: str  # "input" | "parameter" | "constant" | "op"
    op: str | None
    name: str | None
    inputs: tuple[int, ...]
    kwargs: dict


class ComputationGraph:
    """Ordered, acyclic record of primitive ops over named inputs/parameters.

    Nodes are appended in construction order, so every node's inputs precede
    it.  `evaluate` and `backward` replay the records on the eager tape; both
    are pure functions of the bindings.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._outputs: dict[str, int] = {}

    def _append(self, rec: _Record) -> NodeRef:
        self._records.append(rec)
        return NodeRef(self, len(self._records) - 1)

    def input(self, name: str) -> NodeRef:
        return self._append(_Record("input", None, name, (), {}))

    def parameter(self, name: str) -> NodeRef:
        return self._append(_Record("parameter", None, name, (), {}))

    def constant(self, value) -> NodeRef:
        return self._append(_Record("constant", None, None, (), {"value": Tensor(value)}))

    def apply(self, op: str, *args: NodeRef, **kwargs) -> NodeRef:
        if op not in OP_TABLE:
            raise GraphError(f"unknown primitive op {op!r}")
        for a in args:
            if a.graph is not self:
                raise GraphError("node belongs to a different graph")
        return self._append(_Record("op", op, None, tuple(a.index for a in args), kwargs))

    def output(self, name: str, node: NodeRef) -> None:
        self._outputs[name] = node.index

    @property
    def parameter_names(self) -> list[str]:
        return [r.name for r in self._records if r.kind == "parameter"]

    def _run(self, bindings: dict) -> list[Tensor]:
        values: list[Tensor] = []
        for i, rec in enumerate(self._records):
            if rec.kind in ("input", "parameter"):
                if rec.name not in bindings:
                    raise GraphError(f"unbound {rec.kind} {rec.name!r}")
                values.append(_as_tensor(bindings[rec.name]))
            elif rec.kind == "constant":
                values.append(rec.kwargs["value"])
            else:
                fn = OP_TABLE[rec.op]
                args = [values[j] for j in rec.inputs]
                try:
                    if rec.op == "concat":
                        values.append(fn(args, **rec.kwargs))
                    else:
                        values.append(fn(*args, **rec.kwargs))
                except ShapeError as exc:
                    raise GraphError(f"node {i} ({rec.op}): {exc}") from exc
        return values


def evaluate(graph: ComputationGraph, bindings: dict) -> dict[str, Tensor]:
    """Compute every named output of the graph from the given bindings."""
    values = graph._run(bindings)
    return {name: values[idx] for name, idx in graph._outputs.items()}


def backward(graph: ComputationGraph, output: str, bindings: dict) -> dict[str, Tensor]:
    """Gradient of a scalar named output w.r.t. every parameter node."""
    if output not in graph._outputs:
        raise GraphError(f"unknown output {output!r}")
    values = graph._run(bindings)
    root = values[graph._outputs[output]]
    if root.data.size != 1:
        raise GraphError(
            f"backward requires a scalar output, {output!r} has shape {root.data.shape}"
        )
    root.backward()
    grads: dict[str, Tensor] = {}
    for rec, val in zip(graph._records, values):
        if rec.kind != "parameter":
            continue
        g = val.grad if val.grad is not None else np.zeros_like(val.data)
        grads[rec.name] = Tensor(g)
    return grads
