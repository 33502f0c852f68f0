"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op returns a :class:`Node` that records its parents and a closure
mapping the upstream gradient to one gradient per parent.  The graph is
rebuilt on every forward pass; :func:`backward` walks it once in reverse
topological order and accumulates into ``Node.grad``.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

LOG_CLAMP = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Node:
    __slots__ = ("value", "grad", "parents", "backward_rule", "requires_grad", "name")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_rule: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        requires_grad: bool | None = None,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape})"

    # operator sugar, kept to what the losses actually use
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_node(other)))

    def __rsub__(self, other):
        return add(as_node(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, requires_grad=False)


def parameter(value, name: str | None = None) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    return Node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Node) -> Node:
    return Node(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    try:
        out = a.value * b.value
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    return Node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return Node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Node) -> Node:
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax_rows(a: Node) -> Node:
    x = a.value
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"softmax_rows needs an [n x C] input with C >= 2, got {x.shape}")
    z = np.exp(x - x.max(axis=1, keepdims=True)) if x.shape[0] else x.copy()
    out = z / z.sum(axis=1, keepdims=True) if x.shape[0] else z

    def rule(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return Node(out, (a,), rule)


def log_clamped(a: Node, lo: float = LOG_CLAMP) -> Node:
    """Natural log of ``clip(a, lo, 1)``; zero gradient where the clamp is active."""
    x = a.value
    clipped = np.clip(x, lo, 1.0)
    inside = (x >= lo) & (x <= 1.0)
    return Node(np.log(clipped), (a,), lambda g: (np.where(inside, g / clipped, 0.0),))


def grad_reverse(a: Node, lam: float) -> Node:
    if not np.isfinite(lam):
        raise ValueError(f"grad_reverse lambda must be finite, got {lam}")
    lam = float(lam)
    # forward returns the very same array object: bitwise identity
    return Node(a.value, (a,), lambda g: (-lam * g,))


def total(a: Node) -> Node:
    """Sum of all elements as a scalar node."""
    shape = a.shape
    return Node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Node) -> Node:
    size = a.value.size
    if size == 0:
        raise ShapeError("mean of an empty node")
    return mul(total(a), 1.0 / size)


def row_sum(a: Node) -> Node:
    """Sum over the last axis, keeping it as a length-1 column."""
    return Node(a.value.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def take(a: Node, index) -> Node:
    """Numpy-style indexing (slices or integer arrays) with scatter-add backward."""
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Node(a.value[index], (a,), rule)


def concat_rows(nodes: Sequence[Node]) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[0] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def rule(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Node(np.concatenate([n.value for n in nodes], axis=0), nodes, rule)


def pairwise_distances(x: Node, squared: bool = False) -> Node:
    """[n x n] Euclidean distance matrix between the rows of ``x``.

    The non-squared distance uses subgradient 0 wherever two rows coincide.
    """
    v = x.value
    diff = v[:, None, :] - v[None, :, :]
    sq = (diff**2).sum(axis=2)
    if squared:

        def rule(g):
            gs = g + g.T
            return ((gs[:, :, None] * diff).sum(axis=1) * 2.0,)

        return Node(sq, (x,), rule)

    dist = np.sqrt(sq)
    safe = np.where(dist > 0, dist, 1.0)

    def rule(g):
        coef = np.where(dist > 0, g / safe, 0.0)
        coef = coef + coef.T
        return ((coef[:, :, None] * diff).sum(axis=1),)

    return Node(dist, (x,), rule)


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Populate ``grad`` on every node reachable from the scalar ``root``.

    Gradients accumulate, so parameters visited along several paths (or
    across several calls) receive the sum.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological_order(root)
    # interior nodes start fresh; leaves keep what they already hold
    upstream: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            upstream[key] = pg if key not in upstream else upstream[key] + pg


class ParameterSet:
    """Named, ordered collection of trainable leaves plus momentum buffers."""

    def __init__(self, params: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: OrderedDict[str, Node] = OrderedDict()
        self._velocity: dict[str, np.ndarray] = {}
        for name, value in params:
            self.add(name, value)

    def add(self, name: str, value) -> Node:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        node = parameter(value, name=name)
        self._params[name] = node
        self._velocity[name] = np.zeros_like(node.value)
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def velocity(self, name: str) -> np.ndarray:
        return self._velocity[name]

    def assign(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        node = self._params[name]
        if value.shape != node.shape:
            raise ShapeError(f"{name}: cannot assign shape {value.shape} to {node.shape}")
        node.value = value.copy()

    def zero_grad(self) -> None:
        for node in self._params.values():
            node.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self._params.items()}


def sgd_momentum_step(params: ParameterSet, lr: float, momentum: float) -> None:
    """Heavy-ball SGD: ``v = momentum * v + grad``; ``w -= lr * v``; grads cleared."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    for name, node in params.items():
        v = params._velocity[name]
        v *= momentum
        if node.grad is not None:
            v += node.grad
        node.value = node.value - lr * v
        node.grad = None
