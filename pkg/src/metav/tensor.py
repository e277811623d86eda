"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are computed eagerly when a node is created, so ``forward`` is just a
lookup of the memoized value. ``backward`` walks the graph in reverse
topological order and accumulates gradients into every node that requires
them.

Shapes are rank <= 2 with batch-first matrices; scalars produced by the
reductions have shape ``(1,)``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

OP_KINDS = (
    "leaf", "matmul", "add", "mul", "relu", "tanh", "sigmoid", "softmax", "log",
    "mean", "sum", "concat", "reshape", "mse", "scale", "bce_logits",
)

LOG_FLOOR = 1e-300


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. Leaves created with
    ``requires_grad=True`` are the parameters gradients are reported for.
    """

    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward_fn=None):
        arr = np.array(data, dtype=np.float64) if op == "leaf" else np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 2:
            raise ShapeError(f"{op}: rank {arr.ndim} > 2 not supported (shape {arr.shape})")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{op}: produced non-finite values")
        self.data = arr
        self.grad = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op: str, parents: tuple, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, op=op, parents=parents,
                  backward_fn=backward_fn if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None
    return out


def forward(node: Tensor) -> np.ndarray:
    """Value of ``node``; computed once at construction and reused."""
    return node.data


# --- primitives -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def bw(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _node(out, "matmul", (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, "add", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, "mul", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softmax_array(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    out = softmax_array(a.data)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, "softmax", (a,), bw)


def log(a: Tensor) -> Tensor:
    clipped = np.maximum(a.data, LOG_FLOOR)
    live = a.data > LOG_FLOOR
    return _node(np.log(clipped), "log", (a,), lambda g: (np.where(live, g / clipped, 0.0),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return _node(np.array([a.data.mean()]), "mean", (a,),
                 lambda g: (np.full(shape, g[0] / n),))


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _node(np.array([a.data.sum()]), "sum", (a,), lambda g: (np.full(shape, g[0]),))
    out = a.data.sum(axis=axis)
    return _node(out, "sum", (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, "concat", tensors, bw)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    old = a.shape
    return _node(out, "reshape", (a,), lambda g: (g.reshape(old),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        d = 2.0 * g[0] / n * diff
        return d, -d

    return _node(np.array([np.mean(diff * diff)]), "mse", (a, b), bw)


def bce_logits(z: Tensor, target: float) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(z)`` against a constant label."""
    x = z.data
    softplus = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    val = np.mean(softplus - target * x)
    n = x.size

    def bw(g):
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (g[0] / n * (s - target),)

    return _node(np.array([val]), "bce_logits", (z,), bw)


# --- backward ---------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, params: Iterable[Tensor] = ()) -> dict:
    """Back-propagate from a scalar ``root``.

    Returns ``{param: gradient ndarray}`` for every tensor in ``params``;
    parameters not connected to ``root`` get zeros. Every visited node's
    ``.grad`` is also populated.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    params = list(params)
    for p in params:
        p.grad = None
    order = _topo_order(root) if root.requires_grad else []
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != parent.shape:
                g = g.reshape(parent.shape)
            parent.grad = g if parent.grad is None else parent.grad + g
    out = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("backward: non-finite gradient")
        out[p] = g
    return out


# --- optimizer --------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays.

    ``step`` updates the arrays in place and *descends* the supplied
    gradients; callers maximizing an objective pass its negated gradient.
    """

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        self.v = [np.zeros_like(p, dtype=np.float64) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ShapeError(f"adam: expected {len(self.m)} params/grads, got {len(params)}/{len(grads)}")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or np.shape(g) != m.shape:
                raise ShapeError(f"adam: param {p.shape} / grad {np.shape(g)} vs state {m.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: Adam, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    state.step(params, grads)
    return params
