"""Tape-based reverse-mode differentiation on dense float64 arrays.

The graph is implicit: every Node remembers its parents and a closure that
propagates the incoming gradient to them.  Tapes are rebuilt on every forward
pass; node values are never mutated after creation.  Gradients accumulate
additively, so callers must zero them between optimizer steps.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an operation."""


_node_counter = itertools.count()


class Node:
    """One value in the computation graph.

    value and grad always share a shape.  Leaf nodes (parameters, inputs)
    have no parents and no backward closure.
    """

    __slots__ = ("id", "value", "grad", "parents", "_backward", "op")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.id = next(_node_counter)
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape})"

    # Convenience arithmetic; constants are wrapped into leaf nodes.
    def __add__(self, other):
        return add(self, _as_node(other))

    def __radd__(self, other):
        return add(_as_node(other), self)

    def __sub__(self, other):
        return sub(self, _as_node(other))

    def __rsub__(self, other):
        return sub(_as_node(other), self)

    def __mul__(self, other):
        return mul(self, _as_node(other))

    def __rmul__(self, other):
        return mul(_as_node(other), self)

    def __neg__(self):
        return mul_const(self, -1.0)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Node, b: Node, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "add")
    out = Node(a.value + b.value, (a, b), op="add")

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    out._backward = backward
    return out


def sub(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "sub")
    out = Node(a.value - b.value, (a, b), op="sub")

    def backward(g):
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    out._backward = backward
    return out


def mul(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "mul")
    out = Node(a.value * b.value, (a, b), op="mul")

    def backward(g):
        a.grad += _unbroadcast(g * b.value, a.shape)
        b.grad += _unbroadcast(g * a.value, b.shape)

    out._backward = backward
    return out


def mul_const(a: Node, c: float) -> Node:
    out = Node(a.value * c, (a,), op="mul_const")

    def backward(g):
        a.grad += g * c

    out._backward = backward
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = Node(a.value @ b.value, (a, b), op="matmul")

    def backward(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    out._backward = backward
    return out


def affine(x: Node, w: Node, b: Node) -> Node:
    """x @ w + b, with x either a vector [D] or a batch [B, D]."""
    xv = x.value
    if xv.ndim == 1:
        if w.value.ndim != 2 or xv.shape[0] != w.shape[0]:
            raise ShapeError(f"affine: shapes {x.shape} and {w.shape} do not conform")
        out = Node(xv @ w.value + b.value, (x, w, b), op="affine")

        def backward(g):
            x.grad += g @ w.value.T
            w.grad += np.outer(xv, g)
            b.grad += g

        out._backward = backward
        return out
    return add(matmul(x, w), b)


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    out = Node(y, (a,), op="tanh")

    def backward(g):
        a.grad += g * (1.0 - y * y)

    out._backward = backward
    return out


def sigmoid(a: Node) -> Node:
    y = 1.0 / (1.0 + np.exp(-np.clip(a.value, -500, 500)))
    out = Node(y, (a,), op="sigmoid")

    def backward(g):
        a.grad += g * y * (1.0 - y)

    out._backward = backward
    return out


def relu(a: Node) -> Node:
    mask = a.value > 0
    out = Node(a.value * mask, (a,), op="relu")

    def backward(g):
        a.grad += g * mask

    out._backward = backward
    return out


def exp(a: Node) -> Node:
    y = np.exp(a.value)
    out = Node(y, (a,), op="exp")

    def backward(g):
        a.grad += g * y

    out._backward = backward
    return out


def log(a: Node) -> Node:
    out = Node(np.log(a.value), (a,), op="log")

    def backward(g):
        a.grad += g / a.value

    out._backward = backward
    return out


def square(a: Node) -> Node:
    out = Node(a.value * a.value, (a,), op="square")

    def backward(g):
        a.grad += g * 2.0 * a.value

    out._backward = backward
    return out


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = list(nodes)
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), nodes, op="concat")
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            n.grad += g[tuple(idx)]

    out._backward = backward
    return out


def slice_last(a: Node, lo: int, hi: int) -> Node:
    """Slice along the last axis; used to split fused gate pre-activations."""
    out = Node(a.value[..., lo:hi], (a,), op="slice")

    def backward(g):
        a.grad[..., lo:hi] += g

    out._backward = backward
    return out


def sum_all(a: Node) -> Node:
    out = Node(a.value.sum(), (a,), op="sum")

    def backward(g):
        a.grad += g

    out._backward = backward
    return out


def mean_all(a: Node) -> Node:
    n = a.value.size
    out = Node(a.value.mean(), (a,), op="mean")

    def backward(g):
        a.grad += g / n

    out._backward = backward
    return out


def sum_last(a: Node) -> Node:
    """Sum over the last axis, keeping leading axes."""
    out = Node(a.value.sum(axis=-1), (a,), op="sum_last")

    def backward(g):
        a.grad += np.expand_dims(g, -1)

    out._backward = backward
    return out


def take_last(a: Node, index: np.ndarray) -> Node:
    """Select one entry per row along the last axis (e.g. chosen-action picks)."""
    index = np.asarray(index, dtype=np.intp)
    out = Node(np.take_along_axis(a.value, index[..., None], axis=-1)[..., 0],
               (a,), op="take_last")

    def backward(g):
        expanded = np.zeros_like(a.value)
        np.put_along_axis(expanded, index[..., None], g[..., None], axis=-1)
        a.grad += expanded

    out._backward = backward
    return out


def clip(a: Node, lo: float, hi: float) -> Node:
    mask = (a.value >= lo) & (a.value <= hi)
    out = Node(np.clip(a.value, lo, hi), (a,), op="clip")

    def backward(g):
        a.grad += g * mask

    out._backward = backward
    return out


def minimum(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "minimum")
    take_a = a.value <= b.value
    out = Node(np.minimum(a.value, b.value), (a, b), op="minimum")

    def backward(g):
        a.grad += _unbroadcast(g * take_a, a.shape)
        b.grad += _unbroadcast(g * ~take_a, b.shape)

    out._backward = backward
    return out


def softmax(logits: Node) -> Node:
    """Stable softmax over the last axis."""
    if not np.all(np.isfinite(logits.value)):
        raise ValueError("softmax: non-finite logits")
    if logits.value.shape[-1] < 1:
        raise ShapeError("softmax: empty last axis")
    shifted = logits.value - logits.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Node(y, (logits,), op="softmax")

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        logits.grad += y * (g - dot)

    out._backward = backward
    return out


def log_softmax(logits: Node) -> Node:
    if not np.all(np.isfinite(logits.value)):
        raise ValueError("log_softmax: non-finite logits")
    shifted = logits.value - logits.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Node(y, (logits,), op="log_softmax")
    p = np.exp(y)

    def backward(g):
        logits.grad += g - p * g.sum(axis=-1, keepdims=True)

    out._backward = backward
    return out


_FORWARD_OPS = {
    "add": lambda inputs: add(*inputs),
    "mul": lambda inputs: mul(*inputs),
    "matmul": lambda inputs: matmul(*inputs),
    "affine": lambda inputs: affine(*inputs),
    "tanh": lambda inputs: tanh(*inputs),
    "relu": lambda inputs: relu(*inputs),
    "concat": lambda inputs: concat(inputs),
}


def forward_op(kind: str, inputs: Sequence[Node]) -> Node:
    """Uniform dispatch over the primitive forward operations."""
    if kind not in _FORWARD_OPS:
        raise ValueError(f"unknown op kind {kind!r}")
    return _FORWARD_OPS[kind](list(inputs))


def topo_order(root: Node) -> list[Node]:
    """Parents-before-children order, iterative to spare the recursion limit."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into every reachable node's grad."""
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    root.grad = root.grad + np.ones_like(root.value)
    for node in reversed(topo_order(root)):
        if node._backward is not None:
            node._backward(node.grad)
