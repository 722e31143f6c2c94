"""Minimal reverse-mode automatic differentiation on numpy arrays.

The engine is an eager tape: every operation computes its forward value
immediately and records a node with the vector-Jacobian products needed
for the backward sweep.  The tape is rebuilt for every training step,
which keeps the engine trivially correct for data-dependent graphs.

Values are numpy arrays of whatever float dtype the caller feeds in.
Training uses float32 parameters and activations; reductions (``asum``,
``logsumexp``) accumulate in float64 before casting back, which is what
keeps large mixture log-densities stable.  Gradient checks run the same
ops on float64 inputs.

Scope is deliberately small: elementwise arithmetic, matmul, a few
shape ops, ``logsumexp``, and closed-form ``logdet``/inverse for 2x2 SPD
matrices stored as three entry arrays.  No general broadcasting rules
beyond what numpy does elementwise, no convolutions, no higher-order
derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalDomainError

# Determinants at or below this are treated as numerically singular.
DET_GUARD = 1e-30


class Node:
    """One tape entry: a forward value plus how to push gradients back."""

    __slots__ = ("graph", "value", "needs_grad", "grad", "_parents", "_vjps")

    def __init__(self, graph, value, parents=(), vjps=(), needs_grad=False):
        self.graph = graph
        self.value = value
        self.needs_grad = needs_grad
        self.grad = None
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    # Arithmetic sugar; every dunder routes through the module-level ops
    # so there is exactly one implementation of each derivative rule.
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, needs_grad={self.needs_grad})"


class Graph:
    """Append-only tape of nodes in topological (creation) order."""

    def __init__(self):
        self.nodes = []
        self._param_index = {}

    def _record(self, value, parents=(), vjps=(), needs_grad=None):
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        node = Node(self, np.asarray(value), parents, vjps, needs_grad)
        self.nodes.append(node)
        return node

    def constant(self, value, dtype=None):
        """Leaf that never receives a gradient."""
        arr = np.asarray(value, dtype=dtype)
        return self._record(arr, needs_grad=False)

    def param(self, array):
        """Leaf gradient target.  Wrapping the same array twice returns the
        same node, so shared parameters accumulate correctly."""
        key = id(array)
        node = self._param_index.get(key)
        if node is None:
            node = self._record(np.asarray(array), needs_grad=True)
            self._param_index[key] = node
        return node

    def backward(self, loss):
        """Backpropagate from a scalar ``loss`` node.

        Returns a dict mapping each parameter leaf (created via
        :meth:`param`) to its gradient array.  Visits every node exactly
        once, in reverse tape order, accumulating additively where a node
        feeds several consumers.
        """
        if loss.graph is not self:
            raise ConfigurationError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ConfigurationError(
                f"backward expects a scalar loss, got shape {loss.value.shape}"
            )
        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or not node.needs_grad:
                continue
            node.grad = g
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.needs_grad:
                    continue
                contrib = vjp(g)
                prev = grads.get(id(parent))
                grads[id(parent)] = contrib if prev is None else prev + contrib
        return {node: node.grad for node in self._param_index.values()}


def _wrap(graph, x, like=None):
    if isinstance(x, Node):
        return x
    dtype = like.value.dtype if like is not None else None
    return graph.constant(x, dtype=dtype)


def _pair(a, b):
    """Coerce (a, b) so at least one is a Node and both share its graph."""
    if isinstance(a, Node):
        return a, _wrap(a.graph, b, like=a)
    if isinstance(b, Node):
        return _wrap(b.graph, a, like=b), b
    raise ConfigurationError("at least one operand must be a Node")


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64)
    return grad


def _bcast_vjp(operand):
    shape = operand.value.shape
    dtype = operand.value.dtype
    return lambda g, s=shape, d=dtype: _unbroadcast(np.asarray(g), s).astype(d, copy=False)


# ---------------------------------------------------------------------------
# Elementwise ops


def add(a, b):
    a, b = _pair(a, b)
    ga, gb = _bcast_vjp(a), _bcast_vjp(b)
    return a.graph._record(a.value + b.value, (a, b), (ga, gb))


def sub(a, b):
    a, b = _pair(a, b)
    ga, gb = _bcast_vjp(a), _bcast_vjp(b)
    return a.graph._record(
        a.value - b.value, (a, b), (ga, lambda g: -gb(g))
    )


def mul(a, b):
    a, b = _pair(a, b)
    ga, gb = _bcast_vjp(a), _bcast_vjp(b)
    return a.graph._record(
        a.value * b.value,
        (a, b),
        (lambda g: ga(g * b.value), lambda g: gb(g * a.value)),
    )


def div(a, b):
    a, b = _pair(a, b)
    ga, gb = _bcast_vjp(a), _bcast_vjp(b)
    out = a.value / b.value
    return a.graph._record(
        out,
        (a, b),
        (lambda g: ga(g / b.value), lambda g: gb(-g * out / b.value)),
    )


def neg(a):
    return a.graph._record(-a.value, (a,), (lambda g: -g,))


def exp(a):
    out = np.exp(a.value)
    return a.graph._record(out, (a,), (lambda g: g * out,))


def log(a):
    return a.graph._record(np.log(a.value), (a,), (lambda g: g / a.value,))


def sqrt(a):
    out = np.sqrt(a.value)
    return a.graph._record(out, (a,), (lambda g: g / (2.0 * out),))


def square(a):
    return a.graph._record(
        np.square(a.value), (a,), (lambda g: g * (2.0 * a.value),)
    )


def relu(a):
    # Subgradient at exactly 0 is 0.
    mask = a.value > 0
    return a.graph._record(
        np.where(mask, a.value, 0), (a,), (lambda g: g * mask,)
    )


def logistic(a):
    v = a.value
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = out.astype(v.dtype, copy=False)
    return a.graph._record(out, (a,), (lambda g: g * out * (1.0 - out),))


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the input was in range."""
    inside = (a.value >= lo) & (a.value <= hi)
    return a.graph._record(
        np.clip(a.value, lo, hi), (a,), (lambda g: g * inside,)
    )


# ---------------------------------------------------------------------------
# Shape and reduction ops


def reshape(a, shape):
    orig = a.value.shape
    return a.graph._record(
        a.value.reshape(shape), (a,), (lambda g: g.reshape(orig),)
    )


def take_column(a, j):
    """Select column ``j`` of a 2-D node."""
    if a.value.ndim != 2:
        raise ConfigurationError("take_column expects a 2-D node")
    n_cols = a.value.shape[1]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[:, j] = g
        return out

    if not 0 <= j < n_cols:
        raise ConfigurationError(f"column {j} out of range for width {n_cols}")
    return a.graph._record(a.value[:, j], (a,), (vjp,))


def stack_columns(nodes):
    """Stack 1-D nodes of equal length into a (n, k) node."""
    first = nodes[0]
    value = np.stack([n.value for n in nodes], axis=1)
    vjps = tuple(
        (lambda g, i=i: g[:, i]) for i in range(len(nodes))
    )
    return first.graph._record(value, tuple(nodes), vjps)


def asum(a, axis=None):
    """Sum with float64 accumulation, cast back to the input dtype."""
    dtype = a.value.dtype
    out = a.value.sum(axis=axis, dtype=np.float64).astype(dtype)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape)
        return np.broadcast_to(np.expand_dims(g, axis), a.value.shape)

    return a.graph._record(out, (a,), (vjp,))


def mean(a, axis=None):
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(asum(a, axis=axis), 1.0 / n)


def logsumexp(a, axis=-1):
    """Shift-stable log-sum-exp along ``axis``: m + ln sum exp(v - m)."""
    v = a.value
    if v.size == 0:
        raise ConfigurationError("logsumexp over an empty array")
    m = np.max(v, axis=axis, keepdims=True)
    acc = np.exp((v - m).astype(np.float64)).sum(axis=axis, keepdims=True)
    out = (m + np.log(acc).astype(v.dtype)).squeeze(axis=axis)

    def vjp(g):
        soft = np.exp(v - np.expand_dims(out, axis))
        return np.expand_dims(g, axis) * soft

    return a.graph._record(out, (a,), (vjp,))


def matmul(a, b):
    a, b = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ConfigurationError("matmul expects 2-D operands")
    if a.value.shape[1] != b.value.shape[0]:
        raise ConfigurationError(
            f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}"
        )
    return a.graph._record(
        a.value @ b.value,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


# ---------------------------------------------------------------------------
# 2x2 SPD helpers (covariances stored as entry arrays a=tt, b=ty, c=yy)


def _check_spd2(a, b, c):
    det = a * c - b * b
    bad = ~((det > DET_GUARD) & (a > 0) & (c > 0))
    if np.any(bad):
        worst = float(np.min(np.asarray(det)[np.asarray(bad)]))
        raise NumericalDomainError(
            f"2x2 matrix not SPD: determinant {worst:g}", value=worst
        )
    return det


def _wrap_spd_entries(a, b, c):
    ref = next(x for x in (a, b, c) if isinstance(x, Node))
    g = ref.graph
    return (_wrap(g, a, like=ref), _wrap(g, b, like=ref),
            _wrap(g, c, like=ref))


def logdet2x2(a, b, c):
    """log(det) of [[a, b], [b, c]], validated SPD.  Node or array inputs."""
    if not (isinstance(a, Node) or isinstance(b, Node) or isinstance(c, Node)):
        return np.log(_check_spd2(a, b, c))
    a, b, c = _wrap_spd_entries(a, b, c)
    _check_spd2(a.value, b.value, c.value)
    det = sub(mul(a, c), mul(b, b))
    return log(det)


def inv2x2(a, b, c):
    """Entries (ia, ib, ic) of the inverse of SPD [[a, b], [b, c]]."""
    if not (isinstance(a, Node) or isinstance(b, Node) or isinstance(c, Node)):
        det = _check_spd2(a, b, c)
        return c / det, -b / det, a / det
    a, b, c = _wrap_spd_entries(a, b, c)
    _check_spd2(a.value, b.value, c.value)
    det = sub(mul(a, c), mul(b, b))
    return div(c, det), neg(div(b, det)), div(a, det)


# ---------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    """Weights and biases of a fully connected net with ReLU between
    layers and no activation after the last one."""

    weights: list
    biases: list

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self):
        """Flat list in declared layer order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])


def init_mlp(sizes, rng, dtype=np.float32):
    """Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights, biases)


def mlp_forward(params, x, graph):
    """Run the MLP on the tape.  ``x`` is a (batch, in) Node or array."""
    h = x if isinstance(x, Node) else graph.constant(x)
    if h.value.ndim != 2:
        raise ConfigurationError("mlp_forward expects a (batch, features) input")
    if h.value.shape[1] != params.weights[0].shape[0]:
        raise ConfigurationError(
            f"input width {h.value.shape[1]} does not match first layer "
            f"width {params.weights[0].shape[0]}"
        )
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = add(matmul(h, graph.param(w)), graph.param(b))
        if i != last:
            h = relu(h)
    return h


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Adam moments matching a flat parameter-array list, plus step count."""

    m: list
    v: list
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays, lr=3e-4):
        return cls(m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays], lr=lr)


def adam_step(arrays, grads, state):
    """Standard bias-corrected Adam update, applied in place."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ConfigurationError("parameter/gradient/state layouts differ")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for arr, g, m, v in zip(arrays, grads, state.m, state.v):
        g = np.asarray(g, dtype=arr.dtype)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        arr -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return arrays
