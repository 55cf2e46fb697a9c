"""Tape-based reverse-mode automatic differentiation over float64 arrays.

A :class:`Graph` is an append-only tape. Every operation appends one node
holding its value and a closure that maps the output gradient to input
gradients. Because inputs always precede outputs, a single reverse sweep over
node ids is a valid topological order.

Second derivatives are not obtained by differentiating the backward closures.
Instead, quantities such as a network's input gradient are built explicitly out
of forward ops (see :func:`gil.nn.mlp.input_gradient_node`), so an ordinary
backward pass through them yields the mixed second derivatives.
"""

import math

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

LEAKY_SLOPE = 0.2


class Node:
    """Handle to one value on a :class:`Graph`."""

    __slots__ = ("graph", "id")

    def __init__(self, graph, id):
        self.graph = graph
        self.id = id

    @property
    def value(self):
        return self.graph.values[self.id]

    @property
    def shape(self):
        return self.graph.values[self.id].shape

    @property
    def kind(self):
        return self.graph.kinds[self.id]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(id={self.id}, kind={self.kind!r}, shape={self.shape})"


class Graph:
    def __init__(self):
        self.kinds = []
        self.inputs = []
        self.values = []
        self._backward = []
        self._bound = {}

    def __len__(self):
        return len(self.values)

    def _push(self, kind, inputs, value, backward=None):
        if type(value) is not np.ndarray or value.dtype != np.float64:
            value = np.asarray(value, dtype=np.float64)
        # a sum is non-finite iff some entry is (barring overflow near 1e308)
        if not math.isfinite(value.sum()):
            raise NumericError(f"op {kind!r} produced a non-finite value at node {len(self.values)}")
        self.kinds.append(kind)
        self.inputs.append(tuple(n.id for n in inputs))
        self.values.append(value)
        self._backward.append(backward)
        return Node(self, len(self.values) - 1)

    def variable(self, value):
        """Trainable leaf. :func:`backward` reports a gradient for every variable."""
        return self._push("variable", (), np.array(value, dtype=np.float64))

    def constant(self, value):
        return self._push("constant", (), np.array(value, dtype=np.float64))

    def as_node(self, x):
        if isinstance(x, Node):
            if x.graph is not self:
                raise ContractError("node belongs to a different graph")
            return x
        return self.constant(x)

    def bind(self, params):
        """Variables for an :class:`~gil.nn.mlp.MLPParams`, created once per graph."""
        key = id(params)
        if key not in self._bound:
            self._bound[key] = (params, [(self.variable(l.weight), self.variable(l.bias)) for l in params.layers])
        return self._bound[key][1]

    def bound(self, params):
        entry = self._bound.get(id(params))
        return None if entry is None else entry[1]

    def variables(self):
        return [i for i, k in enumerate(self.kinds) if k == "variable"]


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise ContractError("at least one operand must be a graph node")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a, b):
    g = _graph_of(a, b)
    return g, g.as_node(a), g.as_node(b)


def add(a, b):
    g, a, b = _binary(a, b)
    sa, sb = a.shape, b.shape
    return g._push("add", (a, b), a.value + b.value,
                   lambda go: (_unbroadcast(go, sa), _unbroadcast(go, sb)))


def sub(a, b):
    g, a, b = _binary(a, b)
    sa, sb = a.shape, b.shape
    return g._push("sub", (a, b), a.value - b.value,
                   lambda go: (_unbroadcast(go, sa), _unbroadcast(-go, sb)))


def mul(a, b):
    g, a, b = _binary(a, b)
    av, bv = a.value, b.value
    return g._push("mul", (a, b), av * bv,
                   lambda go: (_unbroadcast(go * bv, av.shape), _unbroadcast(go * av, bv.shape)))


def div(a, b):
    g, a, b = _binary(a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericError("division by zero")
    return g._push("div", (a, b), av / bv,
                   lambda go: (_unbroadcast(go / bv, av.shape),
                               _unbroadcast(-go * av / (bv * bv), bv.shape)))


def matmul(a, b):
    g, a, b = _binary(a, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shapes {av.shape} and {bv.shape} do not chain")
    return g._push("matmul", (a, b), av @ bv, lambda go: (go @ bv.T, av.T @ go))


def transpose(a):
    return a.graph._push("transpose", (a,), a.value.T, lambda go: (go.T,))


def relu(a):
    mask = (a.value > 0).astype(np.float64)
    return a.graph._push("relu", (a,), a.value * mask, lambda go: (go * mask,))


def leaky_relu(a, slope=LEAKY_SLOPE):
    scale = np.where(a.value > 0, 1.0, slope)
    return a.graph._push("leaky_relu", (a,), a.value * scale, lambda go: (go * scale,))


def tanh(a):
    out = np.tanh(a.value)
    return a.graph._push("tanh", (a,), out, lambda go: (go * (1.0 - out * out),))


def absolute(a):
    # subgradient +1 at zero so zero-initialised outputs still receive a signal
    sign = np.where(a.value >= 0, 1.0, -1.0)
    return a.graph._push("abs", (a,), np.abs(a.value), lambda go: (go * sign,))


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return a.graph._push("exp", (a,), out, lambda go: (go * out,))


def square(a):
    av = a.value
    return a.graph._push("square", (a,), av * av, lambda go: (2.0 * av * go,))


def _expand(go, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(go, shape)
    if not keepdims:
        go = np.expand_dims(go, axis)
    return np.broadcast_to(go, shape)


def total(a, axis=None, keepdims=False):
    shape = a.shape
    return a.graph._push("sum", (a,), a.value.sum(axis=axis, keepdims=keepdims),
                         lambda go: (np.array(_expand(go, shape, axis, keepdims)),))


def mean(a, axis=None, keepdims=False):
    shape = a.shape
    n = a.value.size if axis is None else shape[axis]
    return a.graph._push("mean", (a,), a.value.mean(axis=axis, keepdims=keepdims),
                         lambda go: (np.array(_expand(go, shape, axis, keepdims)) / n,))


def norm(a, axis=None, keepdims=False):
    """Euclidean norm; the gradient at an exactly-zero input is taken as zero."""
    av = a.value
    out = np.sqrt((av * av).sum(axis=axis, keepdims=keepdims))

    def back(go):
        n = out if (axis is None or keepdims) else np.expand_dims(out, axis)
        gexp = _expand(go, av.shape, axis, keepdims)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gexp * av / safe, 0.0),)

    return a.graph._push("norm", (a,), out, back)


def logsumexp(a):
    """log(sum(exp(a))) over every entry, computed with the max shift."""
    av = a.value
    m = av.max()
    e = np.exp(av - m)
    s = e.sum()
    return a.graph._push("logsumexp", (a,), m + np.log(s), lambda go: (go * e / s,))


def concat(nodes, axis=1):
    g = _graph_of(*nodes)
    nodes = [g.as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]
    return g._push("concat", nodes, np.concatenate([n.value for n in nodes], axis=axis),
                   lambda go: tuple(np.split(go, cuts, axis=axis)))


def slice_cols(a, start, stop):
    shape = a.shape

    def back(go):
        full = np.zeros(shape)
        full[:, start:stop] = go
        return (full,)

    return a.graph._push("slice", (a,), a.value[:, start:stop], back)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    z = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DimensionError(f"label outside [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = -logp[np.arange(n), labels].mean()

    def back(go):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (go * p / n,)

    return logits.graph._push("softmax_ce", (logits,), value, back)


ACTIVATIONS = {
    "linear": lambda x: x,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
}


def activate(x, kind):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    return fn(x)


def backward(graph, loss):
    """Gradient of the scalar ``loss`` with respect to every variable on ``graph``.

    Returns a dict mapping variable node id to a gradient array. Variables the
    loss does not depend on get an all-zero gradient.
    """
    loss_id = loss.id if isinstance(loss, Node) else int(loss)
    if graph.values[loss_id].size != 1:
        raise ContractError(f"loss node {loss_id} is not scalar (shape {graph.values[loss_id].shape})")
    grads = [None] * (loss_id + 1)
    grads[loss_id] = np.ones_like(graph.values[loss_id])
    for i in range(loss_id, -1, -1):
        go = grads[i]
        fn = graph._backward[i]
        if go is None or fn is None:
            continue
        for j, gj in zip(graph.inputs[i], fn(go)):
            grads[j] = gj if grads[j] is None else grads[j] + gj
    out = {}
    for i in graph.variables():
        g = grads[i] if i <= loss_id else None
        out[i] = np.zeros_like(graph.values[i]) if g is None else np.asarray(g, dtype=np.float64).reshape(graph.values[i].shape)
    return out
