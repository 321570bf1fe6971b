"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

A :class:`Graph` is a single-use tape: operations append nodes in execution
order and :func:`backward` walks the tape in strict reverse construction
order, accumulating adjoints. Graphs are rebuilt from scratch every training
step, which keeps the engine small and makes replay trivially deterministic.

Tensors are immutable handles: ``values`` is a read-only (rows, cols) float64
array and ``node`` is the position on the owning tape (``None`` for
constants, which never receive gradients). Only the primitives the training
objective needs are provided; there is no broadcasting and no rank-3 support.

A graph and the tensors it owns must stay on one thread; independent graphs
may be built and differentiated concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateClassError,
    DimensionError,
    EmptyBatchError,
    NumericError,
    ParameterError,
    RankError,
)

__all__ = [
    "Tensor",
    "Graph",
    "GradientMap",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "relu",
    "sigmoid",
    "transpose",
    "masked_softmax",
    "cross_entropy_mean",
    "backward",
    "grad_check",
    "register_op",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _as_matrix(values) -> np.ndarray:
    """Coerce input to a fresh, read-only 2-D float64 array.

    Python scalars become 1x1, 1-D sequences become a single row.
    """
    a = np.array(values, dtype=np.float64, order="C")
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"only rank <= 2 values are supported, got rank {a.ndim}")
    return _freeze(a)


@dataclass(frozen=True)
class Tensor:
    """Handle to a value on a computation graph (or a free constant)."""

    values: np.ndarray
    node: Optional[int] = None
    graph: Optional["Graph"] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise RankError(f"item() needs a 1x1 tensor, got {self.values.shape}")
        return float(self.values[0, 0])


def constant(values) -> Tensor:
    """A tensor that participates in ops but never receives a gradient."""
    return Tensor(values=_as_matrix(values))


@dataclass
class _Node:
    kind: str
    parents: tuple            # node ids, None where the input was a constant
    inputs: tuple             # input value arrays, aligned with parents
    value: np.ndarray
    ctx: tuple = ()


# kind -> forward(inputs, ctx) -> value
_FORWARD: dict[str, Callable] = {}
# kind -> backward(inputs, value, ctx, adjoint) -> per-parent gradients
_BACKWARD: dict[str, Callable] = {}


def register_op(kind: str, forward: Callable, backward_fn: Callable) -> None:
    """Register a new differentiable node kind (used by the spectral layer)."""
    if kind in _FORWARD:
        raise ParameterError(f"op kind {kind!r} already registered")
    _FORWARD[kind] = forward
    _BACKWARD[kind] = backward_fn


class Graph:
    """Append-only tape of operations, topological by construction."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_ids: list[int] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, values) -> Tensor:
        """Register a differentiable input (parameter) on the tape."""
        v = _as_matrix(values)
        node = _Node(kind="leaf", parents=(), inputs=(), value=v)
        self._nodes.append(node)
        nid = len(self._nodes) - 1
        self._leaf_ids.append(nid)
        return Tensor(values=v, node=nid, graph=self)

    def record(self, kind: str, operands: Sequence[Tensor], ctx: tuple = ()) -> Tensor:
        for t in operands:
            if t.graph is not None and t.graph is not self:
                raise ParameterError("operands belong to a different graph")
        inputs = tuple(t.values for t in operands)
        value = _freeze(_FORWARD[kind](inputs, ctx))
        node = _Node(
            kind=kind,
            parents=tuple(t.node for t in operands),
            inputs=inputs,
            value=value,
        )
        node.ctx = ctx
        self._nodes.append(node)
        return Tensor(values=value, node=len(self._nodes) - 1, graph=self)

    def replay(self) -> bool:
        """Recompute every node from its cached inputs; True iff bit-identical."""
        for node in self._nodes:
            if node.kind == "leaf":
                continue
            again = _FORWARD[node.kind](node.inputs, node.ctx)
            if not np.array_equal(again, node.value):
                return False
        return True

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        return tuple(self._leaf_ids)


def _graph_of(operands: Sequence[Tensor]) -> Optional[Graph]:
    for t in operands:
        if t.graph is not None:
            return t.graph
    return None


def _apply(kind: str, operands: Sequence[Tensor], ctx: tuple = ()) -> Tensor:
    g = _graph_of(operands)
    if g is None:
        # pure-constant expression: evaluate eagerly, stay off any tape
        inputs = tuple(t.values for t in operands)
        return Tensor(values=_freeze(_FORWARD[kind](inputs, ctx)))
    return g.record(kind, operands, ctx)


# ---------------------------------------------------------------------------
# primitive definitions

def _fw_matmul(inputs, ctx):
    a, b = inputs
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    return a @ b


def _bw_matmul(inputs, value, ctx, g):
    a, b = inputs
    return g @ b.T, a.T @ g


def _same_shape(a, b, name):
    if a.shape != b.shape:
        raise DimensionError(f"{name} operands disagree: {a.shape} vs {b.shape}")


def _fw_add(inputs, ctx):
    a, b = inputs
    _same_shape(a, b, "add")
    return a + b


def _fw_sub(inputs, ctx):
    a, b = inputs
    _same_shape(a, b, "sub")
    return a - b


def _fw_mul(inputs, ctx):
    a, b = inputs
    _same_shape(a, b, "mul")
    return a * b


def _bw_mul(inputs, value, ctx, g):
    a, b = inputs
    return g * b, g * a


def _fw_scale(inputs, ctx):
    return inputs[0] * ctx[0]


def _fw_shift(inputs, ctx):
    return inputs[0] + ctx[0]


def _fw_relu(inputs, ctx):
    return np.maximum(inputs[0], 0.0)


def _bw_relu(inputs, value, ctx, g):
    # subgradient 0 at the kink
    return (g * (inputs[0] > 0.0),)


def _fw_sigmoid(inputs, ctx):
    x = inputs[0]
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bw_sigmoid(inputs, value, ctx, g):
    return (g * value * (1.0 - value),)


def _fw_transpose(inputs, ctx):
    return inputs[0].T.copy()


def _fw_masked_softmax(inputs, ctx):
    x = inputs[0]
    (excluded,) = ctx
    k = x.shape[1]
    if k < 2:
        raise DegenerateClassError("masked softmax needs at least 2 classes")
    if not 0 <= excluded < k:
        raise ParameterError(f"excluded index {excluded} outside [0, {k})")
    keep = np.ones(k, dtype=bool)
    keep[excluded] = False
    survivors = x[:, keep]
    m = survivors.max(axis=1, keepdims=True)
    e = np.exp(survivors - m)
    p = e / e.sum(axis=1, keepdims=True)
    out = np.zeros_like(x)
    out[:, keep] = p
    return out


def _bw_masked_softmax(inputs, value, ctx, g):
    # excluded column has p = 0, so it drops out of both terms
    p = value
    s = (g * p).sum(axis=1, keepdims=True)
    return (p * (g - s),)


def _fw_cross_entropy_mean(inputs, ctx):
    logits = inputs[0]
    labels = np.asarray(ctx[0], dtype=np.intp)
    m, k = logits.shape
    if m == 0:
        raise EmptyBatchError("cross entropy over an empty batch")
    if labels.shape != (m,):
        raise DimensionError(f"expected {m} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ParameterError("label outside [0, K)")
    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    picked = logits[np.arange(m), labels]
    return np.array([[float(np.mean(lse - picked))]])


def _bw_cross_entropy_mean(inputs, value, ctx, g):
    logits = inputs[0]
    labels = np.asarray(ctx[0], dtype=np.intp)
    m = logits.shape[0]
    mx = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - mx)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(m), labels] -= 1.0
    return (float(g[0, 0]) / m * p,)


register_op("leaf", lambda inputs, ctx: None, lambda *a: ())
register_op("matmul", _fw_matmul, _bw_matmul)
register_op("add", _fw_add, lambda i, v, c, g: (g, g))
register_op("sub", _fw_sub, lambda i, v, c, g: (g, -g))
register_op("mul", _fw_mul, _bw_mul)
register_op("scale", _fw_scale, lambda i, v, c, g: (g * c[0],))
register_op("shift", _fw_shift, lambda i, v, c, g: (g,))
register_op("relu", _fw_relu, _bw_relu)
register_op("sigmoid", _fw_sigmoid, _bw_sigmoid)
register_op("transpose", _fw_transpose, lambda i, v, c, g: (g.T,))
register_op("masked_softmax", _fw_masked_softmax, _bw_masked_softmax)
register_op("cross_entropy_mean", _fw_cross_entropy_mean, _bw_cross_entropy_mean)


# ---------------------------------------------------------------------------
# public op wrappers

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _apply("matmul", (a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _apply("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _apply("sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    return _apply("mul", (a, b))


def scale(a: Tensor, c: float) -> Tensor:
    return _apply("scale", (a,), ctx=(float(c),))


def shift(a: Tensor, c: float) -> Tensor:
    """Add the scalar constant ``c`` to every entry."""
    return _apply("shift", (a,), ctx=(float(c),))


def relu(a: Tensor) -> Tensor:
    return _apply("relu", (a,))


def sigmoid(a: Tensor) -> Tensor:
    return _apply("sigmoid", (a,))


def transpose(a: Tensor) -> Tensor:
    return _apply("transpose", (a,))


def masked_softmax(logits: Tensor, excluded: int) -> Tensor:
    """Row-wise softmax with one class removed from the normalization.

    The excluded column is exactly 0 in the output; the surviving entries of
    each row are positive and sum to 1. Stabilized by shifting each row by
    its surviving maximum.
    """
    return _apply("masked_softmax", (logits,), ctx=(int(excluded),))


def cross_entropy_mean(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean softmax cross entropy of an (m, K) logit batch, as a 1x1 tensor."""
    return _apply("cross_entropy_mean", (logits,), ctx=(tuple(int(y) for y in labels),))


# ---------------------------------------------------------------------------
# backward pass

class GradientMap:
    """Adjoints from one backward pass, keyed by node id."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def wrt(self, t: Tensor) -> np.ndarray:
        if t.node is None:
            raise ParameterError("constants have no gradient")
        return self._grads[t.node]

    def __contains__(self, t: Tensor) -> bool:
        return t.node is not None and t.node in self._grads


def backward(root: Tensor) -> GradientMap:
    """Gradients of a scalar root w.r.t. every reachable node.

    Walks the tape in strict reverse construction order. Leaves that the root
    does not depend on get zero gradients of their own shape.
    """
    if root.graph is None:
        raise ParameterError("cannot differentiate a constant")
    if root.values.shape != (1, 1):
        raise RankError(f"backward needs a scalar root, got shape {root.values.shape}")
    g = root.graph
    adjoints: dict[int, np.ndarray] = {root.node: np.ones((1, 1))}
    for nid in range(root.node, -1, -1):
        adj = adjoints.get(nid)
        if adj is None:
            continue
        node = g._nodes[nid]
        if node.kind == "leaf":
            continue
        parent_grads = _BACKWARD[node.kind](node.inputs, node.value, node.ctx, adj)
        for pid, pg in zip(node.parents, parent_grads):
            if pid is None:
                continue
            if pid in adjoints:
                adjoints[pid] = adjoints[pid] + pg
            else:
                adjoints[pid] = np.array(pg)
    for lid in g.leaf_ids:
        if lid not in adjoints:
            adjoints[lid] = np.zeros_like(g._nodes[lid].value)
    return GradientMap(adjoints)


def grad_check(
    build: Callable[[Graph, list[Tensor]], Tensor],
    params: Sequence[np.ndarray],
    eps: float,
) -> float:
    """Worst relative error between tape gradients and central differences.

    ``build`` must deterministically construct a scalar loss from fresh leaf
    tensors for ``params``. Every parameter entry is perturbed by +/- eps and
    the symmetric difference quotient is compared against the tape gradient
    with denominator max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]

    def loss_at(values: list[np.ndarray]) -> float:
        graph = Graph()
        leaves = [graph.leaf(v) for v in values]
        out = build(graph, leaves)
        val = out.item()
        if not np.isfinite(val):
            raise NumericError(f"loss is not finite: {val}")
        return val

    graph = Graph()
    leaves = [graph.leaf(v) for v in params]
    root = build(graph, leaves)
    if not np.isfinite(root.item()):
        raise NumericError(f"loss is not finite: {root.item()}")
    grads = backward(root)
    analytic = [grads.wrt(leaf) for leaf in leaves]

    worst = 0.0
    for pi, p in enumerate(params):
        for idx in np.ndindex(*p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[pi][idx] += eps
            minus[pi][idx] -= eps
            numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * eps)
            a = float(analytic[pi][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
