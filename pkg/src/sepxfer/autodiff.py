"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every operation builds a :class:`Node` holding its forward value and a
vector-Jacobian product used by :func:`backward`. Only the operations needed
by the separation network and its losses are implemented; there is no
broadcasting beyond scalar-with-array and row/column expansion.

Training runs in float32; float64 graphs are supported for gradient
verification (see :func:`finite_difference_check`).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Node",
    "Parameter",
    "constant",
    "leaf",
    "add",
    "subtract",
    "multiply",
    "matmul",
    "transpose",
    "reshape",
    "sum_",
    "mean",
    "concatenate",
    "sigmoid",
    "tanh",
    "softmax",
    "log",
    "absolute",
    "square",
    "sqrt",
    "l2_normalize",
    "frob_norm_sq",
    "backward",
    "finite_difference_check",
]


class Node:
    """One vertex of the computation graph.

    Attributes:
        value: forward value, a numpy array (scalars are 0-d arrays).
        grad: d(loss)/d(value), populated by :func:`backward`; None until then.
        op: short tag naming the operation that produced this node.
        inputs: parent nodes.
        requires_grad: whether gradients should flow to/through this node.
    """

    __slots__ = ("value", "grad", "op", "inputs", "requires_grad", "_vjp")

    def __init__(self, value, op="leaf", inputs=(), requires_grad=False, vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self.op = op
        self.inputs = tuple(inputs)
        self.requires_grad = bool(requires_grad)
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        """Detached scalar value (for logging)."""
        return float(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return subtract(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return subtract(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return multiply(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return multiply(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division only supported by a plain scalar")
        return multiply(self, _wrap(1.0 / float(other), self.dtype))

    def __neg__(self):
        return multiply(self, _wrap(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def constant(value, dtype=None) -> Node:
    """Wrap an array as a graph leaf that never receives gradients."""
    arr = np.asarray(value, dtype=dtype)
    return Node(arr, op="const")


def leaf(value, requires_grad=True, dtype=None) -> Node:
    arr = np.array(value, dtype=dtype)
    return Node(arr, op="leaf", requires_grad=requires_grad)


def _wrap(value, dtype) -> Node:
    if isinstance(value, Node):
        return value
    return constant(np.asarray(value, dtype=dtype))


class Parameter:
    """A named, trainable leaf. Frozen parameters receive no gradients and
    are skipped by the optimizer."""

    def __init__(self, name: str, value: np.ndarray, frozen: bool = False):
        self.name = name
        self.node = leaf(value, requires_grad=not frozen)
        self.frozen = frozen

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @value.setter
    def value(self, new: np.ndarray):
        self.node.value = np.asarray(new, dtype=self.node.value.dtype)

    @property
    def grad(self):
        return self.node.grad

    def freeze(self):
        self.frozen = True
        self.node.requires_grad = False

    def unfreeze(self):
        self.frozen = False
        self.node.requires_grad = True

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, frozen={self.frozen})"


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the given input shape."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were expanded from size 1
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op_name, fwd, vjp_a, vjp_b):
    def op(a: Node, b: Node) -> Node:
        try:
            value = fwd(a.value, b.value)
        except ValueError as exc:
            raise ValueError(f"{op_name}: incompatible shapes {a.shape} and {b.shape}") from exc
        rg = a.requires_grad or b.requires_grad

        def vjp(g):
            ga = _unbroadcast(vjp_a(g, a.value, b.value), a.shape) if a.requires_grad else None
            gb = _unbroadcast(vjp_b(g, a.value, b.value), b.shape) if b.requires_grad else None
            return ga, gb

        return Node(value, op=op_name, inputs=(a, b), requires_grad=rg, vjp=vjp)

    return op


add = _binary("add", lambda a, b: a + b, lambda g, a, b: g, lambda g, a, b: g)
subtract = _binary("sub", lambda a, b: a - b, lambda g, a, b: g, lambda g, a, b: -g)
multiply = _binary("mul", lambda a, b: a * b, lambda g, a, b: g * b, lambda g, a, b: g * a)


def matmul(a: Node, b: Node) -> Node:
    """Matrix product; supports stacked (batched) operands via numpy matmul."""
    try:
        value = np.matmul(a.value, b.value)
    except ValueError as exc:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc
    rg = a.requires_grad or b.requires_grad

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)
        return ga, gb

    return Node(value, op="matmul", inputs=(a, b), requires_grad=rg, vjp=vjp)


def _unary(op_name, fwd, make_vjp):
    def op(a: Node) -> Node:
        value = fwd(a.value)

        def vjp(g):
            return (make_vjp(g, a.value, value),)

        return Node(value, op=op_name, inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)

    return op


sigmoid = _unary("sigmoid", special.expit, lambda g, x, y: g * y * (1.0 - y))
tanh = _unary("tanh", np.tanh, lambda g, x, y: g * (1.0 - y * y))
log = _unary("log", np.log, lambda g, x, y: g / x)
absolute = _unary("abs", np.abs, lambda g, x, y: g * np.sign(x))
square = _unary("square", np.square, lambda g, x, y: g * 2.0 * x)
sqrt = _unary("sqrt", np.sqrt, lambda g, x, y: g / (2.0 * y))


def softmax(a: Node, axis: int = -1) -> Node:
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return Node(y, op="softmax", inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)


def l2_normalize(a: Node, axis: int = -1, eps: float = 1e-12) -> Node:
    """Scale vectors along `axis` to (numerically) unit L2 norm."""
    s = np.sum(np.square(a.value), axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(s + eps)
    y = a.value * inv

    def vjp(g):
        dot = np.sum(g * a.value, axis=axis, keepdims=True)
        return (g * inv - a.value * (inv**3) * dot,)

    return Node(y.astype(a.value.dtype, copy=False), op="l2norm", inputs=(a,),
                requires_grad=a.requires_grad, vjp=vjp)


def transpose(a: Node, axes=None) -> Node:
    value = np.transpose(a.value, axes)
    if axes is None:
        inv_axes = None
    else:
        inv_axes = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv_axes),)

    return Node(value, op="transpose", inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)


def reshape(a: Node, shape) -> Node:
    value = a.value.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return Node(value, op="reshape", inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)


def sum_(a: Node, axis=None, keepdims: bool = False) -> Node:
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).astype(a.dtype, copy=False),)

    return Node(value, op="sum", inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        count = a.value.size
    else:
        count = np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def frob_norm_sq(a: Node) -> Node:
    """Squared Frobenius norm: sum of squared entries, as a scalar node."""
    value = np.asarray(np.sum(np.square(a.value)))

    def vjp(g):
        return (g * 2.0 * a.value,)

    return Node(value, op="frob2", inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)


def concatenate(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ValueError("concatenate: need at least one node")
    value = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.shape[axis] for n in nodes]
    offsets = np.cumsum([0] + sizes)
    rg = any(n.requires_grad for n in nodes)

    def vjp(g):
        grads = []
        for node, start, stop in zip(nodes, offsets[:-1], offsets[1:]):
            if node.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                grads.append(g[tuple(index)])
            else:
                grads.append(None)
        return tuple(grads)

    return Node(value, op="concat", inputs=nodes, requires_grad=rg, vjp=vjp)


def _getitem(a: Node, index) -> Node:
    value = a.value[index]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[index] = g
        return (out,)

    return Node(value, op="slice", inputs=(a,), requires_grad=a.requires_grad, vjp=vjp)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Node) -> list:
    """Iterative post-order over the subgraph that requires gradients."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate `.grad` on every reachable node with requires_grad set.

    Gradients accumulate additively across fan-out. Raises if the loss is
    not scalar.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.value)
    for node in reversed(_topo_order(loss)):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                # own the buffer so later accumulation can run in place
                parent.grad = np.array(g)
            else:
                parent.grad += g


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.node.grad = None


def finite_difference_check(
    loss_fn: Callable[[], Node],
    params: Sequence[Parameter],
    step: float = 1e-5,
    max_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backward() gradients with central finite differences.

    For parameters with more coordinates than `max_coords`, a random
    subsample of `max_coords` coordinates is checked. Returns the maximum
    relative error over all checked coordinates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {p.name: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
                for p in params}

    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        an_flat = analytic[p.name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = loss_fn().item()
            flat[idx] = orig - step
            f_minus = loss_fn().item()
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            an = float(an_flat[idx])
            # the floor keeps rounding noise at zero-gradient coordinates
            # (about eps * |loss| / step) from registering as disagreement
            denom = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / denom)
    return worst
