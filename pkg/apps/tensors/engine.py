"""
Dense float32 tensors with reverse-mode gradients.

Every op attaches a Node to its output. backward() traces the tape reachable
from a scalar root and walks it in reverse creation order, so each node is
visited once and a node's inputs always precede it. Loss reductions are
accumulated in float64 and stored back as float32.

Broadcasting is limited to (matrix, row-vector bias) in add and to a 2-D
right operand in matmul.
"""

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import (
    GradientError,
    LabelRangeError,
    NonFiniteError,
    OpArgumentError,
    TensorShapeError,
)

DTYPE = np.float32

_sequence = itertools.count()


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple
    vjp: Callable[[np.ndarray], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "seq")

    def __init__(self, data, requires_grad=False, *, _node=None):
        if _node is None:
            array = np.array(data, dtype=DTYPE)
        else:
            array = np.asarray(data, dtype=DTYPE)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(_node.op if _node is not None else "tensor")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = _node
        self.seq = next(_sequence)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self.node is None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(op, value, inputs, vjp):
    requires = any(t.requires_grad for t in inputs)
    return Tensor(value, requires_grad=requires, _node=Node(op, tuple(inputs), vjp))


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.ndim < 2
        or b.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or (b.ndim > 2 and a.shape[:-2] != b.shape[:-2])
    ):
        raise TensorShapeError("matmul", a.shape, b.shape)

    def vjp(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result("matmul", np.matmul(a.data, b.data), (a, b), vjp)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def vjp(g):
            return g, g
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def vjp(g):
            return g, g.reshape(-1, b.shape[0]).sum(axis=0)
    else:
        raise TensorShapeError("add", a.shape, b.shape)
    return _result("add", a.data + b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise TensorShapeError("mul", a.shape, b.shape)

    def vjp(g):
        return g * b.data, g * a.data

    return _result("mul", a.data * b.data, (a, b), vjp)


def sigmoid(x):
    x = as_tensor(x)
    s = expit(x.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _result("sigmoid", s, (x,), vjp)


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return _result("log", value, (x,), vjp)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return _result("tanh", t, (x,), vjp)


def relu(x):
    x = as_tensor(x)

    def vjp(g):
        return (g * (x.data > 0),)

    return _result("relu", np.maximum(x.data, 0), (x,), vjp)


def clamp(x, lo, hi):
    """min(hi, max(lo, x)); the subgradient is 1 on the closed interval [lo, hi]."""
    if not lo < hi:
        raise OpArgumentError(f"clamp requires lo < hi, got lo={lo} hi={hi}")
    x = as_tensor(x)
    lo32, hi32 = DTYPE(lo), DTYPE(hi)

    def vjp(g):
        inside = (x.data >= lo32) & (x.data <= hi32)
        return (g * inside,)

    return _result("clamp", np.clip(x.data, lo32, hi32), (x,), vjp)


def stretch(x, scale, shift=0.0):
    """Affine map x * scale + shift with constant scale and shift."""
    x = as_tensor(x)
    scale32 = DTYPE(scale)

    def vjp(g):
        return (g * scale32,)

    return _result("affine-stretch", x.data * scale32 + DTYPE(shift), (x,), vjp)


def reduce_sum(x, axis=None):
    x = as_tensor(x)
    value = x.data.sum(axis=axis, dtype=np.float64)

    def vjp(g):
        if axis is None:
            return (np.full(x.shape, g, dtype=DTYPE),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result("reduce-sum", value, (x,), vjp)


def softmax(x):
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _result("softmax", s, (x,), vjp)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of (N, C) logits against N integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or logits.shape[0] == 0:
        raise TensorShapeError("softmax-cross-entropy", logits.shape, labels.shape)
    n, n_classes = logits.shape
    bad = (labels < 0) | (labels >= n_classes)
    if bad.any():
        raise LabelRangeError(int(labels[bad][0]), n_classes)

    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    probs = np.exp(z - lse[:, None])

    def vjp(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return (grad * (float(g) / n),)

    return _result("softmax-cross-entropy", loss, (logits,), vjp)


def take(x, index):
    """x[index] along the first axis; repeated indices accumulate gradient."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if x.ndim == 0 or (index.size and (index.min() < -x.shape[0] or index.max() >= x.shape[0])):
        raise TensorShapeError("take", x.shape, index.shape)

    def vjp(g):
        gx = np.zeros(x.shape, dtype=np.float64)
        np.add.at(gx, index, g)
        return (gx,)

    return _result("take", x.data[index], (x,), vjp)


def scatter(values, index, size):
    """Dense vector of length size holding values at the (unique) index positions."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    if values.ndim != 1 or index.shape != values.shape:
        raise TensorShapeError("scatter", values.shape, index.shape)
    out = np.zeros(size, dtype=DTYPE)
    out[index] = values.data

    def vjp(g):
        return (g[index],)

    return _result("scatter", out, (values,), vjp)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise TensorShapeError("reshape", x.shape, shape) from None

    def vjp(g):
        return (g.reshape(x.shape),)

    return _result("reshape", value, (x,), vjp)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise TensorShapeError("transpose", x.shape, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _result("transpose", x.data.transpose(axes), (x,), vjp)


OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "clamp": clamp,
    "affine-stretch": stretch,
    "reduce-sum": reduce_sum,
    "softmax": softmax,
    "softmax-cross-entropy": softmax_cross_entropy,
    "take": take,
    "scatter": scatter,
    "reshape": reshape,
    "transpose": transpose,
}


def forward_op(kind, *inputs, **params):
    try:
        op = OPS[kind]
    except KeyError:
        raise OpArgumentError(f"unknown op kind: {kind}") from None
    return op(*inputs, **params)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

class Graph:
    """Gradient-carrying tensors reachable from a root, in creation order."""

    def __init__(self, tensors):
        self.tensors = tensors

    @classmethod
    def trace(cls, root):
        seen = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen[id(t)] = t
            if t.node is not None:
                stack.extend(i for i in t.node.inputs if i.requires_grad)
        return cls(sorted(seen.values(), key=lambda t: t.seq))

    def __len__(self):
        return len(self.tensors)

    def __iter__(self):
        return iter(self.tensors)


def backward(root):
    """Accumulate d(root)/d(leaf) into every requires_grad leaf's grad."""
    if root.size != 1:
        raise GradientError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise GradientError("backward root does not depend on any tensor requiring grad")

    graph = Graph.trace(root)
    grads = {id(root): np.ones(root.shape, dtype=DTYPE)}
    for t in reversed(graph.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            g = np.asarray(g, dtype=DTYPE).reshape(t.shape)
            if not np.all(np.isfinite(g)):
                raise GradientError("non-finite gradient reached a leaf tensor")
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for inp, ig in zip(t.node.inputs, t.node.vjp(g)):
            if ig is None or not inp.requires_grad:
                continue
            ig = np.asarray(ig, dtype=DTYPE)
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else ig
