"""Reverse-mode automatic differentiation on dense float64 arrays."""

from __future__ import annotations

from collections.abc import Callable, Generator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar, Token
from typing import Any, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ContractError, DimensionError

Array = NDArray[np.float64]
VJP = Callable[[Array], Sequence["Array | None"]]


class Node(NamedTuple):
    """
    One recorded operation of a `Graph`.
    """

    index: int
    """Position in the graph; every input produced by the graph has a smaller index."""
    op: str
    """Name of the operation, for debugging."""
    inputs: tuple[Tensor, ...]
    """Operands; their activations are saved through the closure of `vjp`."""
    output: Tensor
    vjp: VJP
    """Maps the output gradient to one gradient (or None) per input."""


_graph_ctx: ContextVar[Graph | None] = ContextVar("everadapt_graph_ctx", default=None)


class Graph:
    """
    Tape of operations recorded while the graph is the active one.

    Nodes are appended in execution order, so the tape is topologically sorted by construction.
    The active graph lives in a context variable, every thread and task records into its own graph.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._tokens: list[Token[Graph | None]] = []

    def __enter__(self) -> Graph:
        self._tokens.append(_graph_ctx.set(self))
        return self

    def __exit__(self, *exc_info: Any) -> None:
        _graph_ctx.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: VJP) -> Node:
        node = Node(len(self.nodes), op, inputs, output, vjp)
        self.nodes.append(node)
        return node


def active_graph() -> Graph | None:
    return _graph_ctx.get()


@contextmanager
def no_grad() -> Generator[None, None, None]:
    """Suspend recording for the scope of the context."""
    token = _graph_ctx.set(None)
    try:
        yield
    finally:
        _graph_ctx.reset(token)


class Tensor:
    """
    Dense float64 array with an optional gradient slot.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    data: Array
    grad: Array | None
    requires_grad: bool
    name: str

    def __init__(self, data: ArrayLike, *, requires_grad: bool = False, name: str = "") -> None:
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, data: Array, *, requires_grad: bool = False) -> Tensor:
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(data, dtype=np.float64)
        tensor.grad = None
        tensor.requires_grad = requires_grad
        tensor.name = ""
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}.")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: Tensor | float) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Tensor | float) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Tensor | float) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Tensor | float) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Tensor | float) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Tensor | float) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Tensor | float) -> Tensor:
        return div(self, other)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __pow__(self, exponent: float) -> Tensor:
        return power(self, exponent)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> Tensor:
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> Tensor:
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape: tuple[int, ...]) -> Tensor:
        return reshape(self, shape)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)


def as_tensor(value: Tensor | ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def emit(op: str, inputs: tuple[Tensor, ...], data: Array, vjp: VJP) -> Tensor:
    """
    Wrap the result of an operation and record it on the active graph.

    Nothing is recorded when no graph is active or no input requires a gradient.
    """
    graph = _graph_ctx.get()
    requires_grad = graph is not None and any(tensor.requires_grad for tensor in inputs)
    output = Tensor._wrap(data, requires_grad=requires_grad)
    if requires_grad:
        graph.record(op, inputs, output, vjp)  # type: ignore[union-attr]
    return output


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(grad: Array) -> tuple[Array, Array]:
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return emit("add", (a, b), a.data + b.data, vjp)


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(grad: Array) -> tuple[Array, Array]:
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)

    return emit("sub", (a, b), a.data - b.data, vjp)


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(grad: Array) -> tuple[Array, Array]:
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)

    return emit("mul", (a, b), a.data * b.data, vjp)


def div(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(grad: Array) -> tuple[Array, Array]:
        return (
            unbroadcast(grad / b.data, a.shape),
            unbroadcast(-grad * a.data / (b.data * b.data), b.shape),
        )

    return emit("div", (a, b), a.data / b.data, vjp)


def neg(a: Tensor) -> Tensor:
    return emit("neg", (a,), -a.data, lambda grad: (-grad,))


def power(a: Tensor, exponent: float) -> Tensor:
    def vjp(grad: Array) -> tuple[Array]:
        return (grad * exponent * a.data ** (exponent - 1.0),)

    return emit("power", (a,), a.data**exponent, vjp)


def rsqrt(a: Tensor) -> Tensor:
    """Elementwise 1/sqrt(a)."""
    out = 1.0 / np.sqrt(a.data)
    return emit("rsqrt", (a,), out, lambda grad: (-0.5 * grad * out**3,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return emit("exp", (a,), out, lambda grad: (grad * out,))


def log(a: Tensor) -> Tensor:
    return emit("log", (a,), np.log(a.data), lambda grad: (grad / a.data,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not conform: {a.shape} @ {b.shape}.")

    def vjp(grad: Array) -> tuple[Array, Array]:
        return grad @ b.data.T, a.data.T @ grad

    return emit("matmul", (a, b), a.data @ b.data, vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}.")
    return emit("transpose", (a,), a.data.T, lambda grad: (grad.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}.") from exc
    return emit("reshape", (a,), out, lambda grad: (grad.reshape(a.shape),))


Axis = int | tuple[int, ...] | None


def _expand(grad: Array, shape: tuple[int, ...], axis: Axis, keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        grad = np.expand_dims(grad, tuple(ax % len(shape) for ax in axes))
    return np.broadcast_to(grad, shape)


def tensor_sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    def vjp(grad: Array) -> tuple[Array]:
        return (_expand(grad, a.shape, axis, keepdims),)

    return emit("sum", (a,), np.sum(a.data, axis=axis, keepdims=keepdims), vjp)


def tensor_mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))

    def vjp(grad: Array) -> tuple[Array]:
        return (_expand(grad, a.shape, axis, keepdims) / count,)

    return emit("mean", (a,), np.mean(a.data, axis=axis, keepdims=keepdims), vjp)


def index_select(a: Tensor, indices: ArrayLike) -> Tensor:
    """Select rows (first axis) of `a`; repeated indices accumulate their gradients."""
    idx = np.asarray(indices, dtype=np.intp)

    def vjp(grad: Array) -> tuple[Array]:
        out = np.zeros_like(a.data)
        np.add.at(out, idx, grad)
        return (out,)

    return emit("index_select", (a,), a.data[idx], vjp)


def gather(a: Tensor, indices: ArrayLike) -> Tensor:
    """Pick `a[i, indices[i]]` for every row of a matrix."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise DimensionError(f"gather expects [B,C] and [B] indices, got {a.shape} and {idx.shape}.")
    rows = np.arange(a.shape[0])

    def vjp(grad: Array) -> tuple[Array]:
        out = np.zeros_like(a.data)
        out[rows, idx] = grad
        return (out,)

    return emit("gather", (a,), a.data[rows, idx], vjp)


def backward(graph: Graph, loss: Tensor) -> dict[Tensor, Array]:
    """
    Propagate dLoss back through the recorded graph.

    Every leaf (a tensor that requires a gradient and was not produced by the graph) gets its
    gradient accumulated into `.grad`. Returns the leaf gradients keyed by tensor.

    Raises:
        ContractError: If `loss` is not a scalar.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}.")
    produced = {id(node.output) for node in graph.nodes}
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        grad = grads.pop(id(node.output), None)
        if grad is None:
            continue
        for tensor, tensor_grad in zip(node.inputs, node.vjp(grad), strict=True):
            if tensor_grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + tensor_grad if key in grads else tensor_grad
            if key not in produced:
                leaves[key] = tensor
    result: dict[Tensor, Array] = {}
    for key, tensor in leaves.items():
        grad = np.array(grads[key], dtype=np.float64)
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad
        result[tensor] = tensor.grad
    return result
