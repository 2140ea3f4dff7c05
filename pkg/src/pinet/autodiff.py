"""Reverse-mode automatic differentiation over :mod:`pinet.tensor` ops.

A :class:`Graph` is built once from symbolic :class:`Node` objects, then run
any number of times::

    g = Graph()
    x = g.param("x")
    g.output = g.total(g.hadamard(x, x))
    forward(g, {"x": Tensor([2.0, 3.0])})    # Tensor(13.)
    backward(g)["x"]                         # Tensor([4., 6.])

Nodes are appended in creation order, which is always a topological order, so
the tape needs no sorting. Forward values are cached on the graph; backward
walks the cached tape in reverse and accumulates adjoints in a fixed order,
which makes repeated passes bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class GraphError(RuntimeError):
    """Misuse of a graph: unbound leaf, backward before forward, bad seed."""


class Gradients(dict):
    """Mapping from parameter name to gradient tensor of the same shape."""

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.dot(g.flat(), g.flat())) for g in self.values())))


# -- op registry -------------------------------------------------------------
# Each rule maps (upstream grad, input values, output value, attrs) to one
# ndarray per input. Rules work on raw arrays; the tape wraps results.


def _unbroadcast_matmul(g, a, b):
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _instance_norm_bwd(g, x, y, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return inv * (g - g.mean(axis=-1, keepdims=True) - y * (g * y).mean(axis=-1, keepdims=True))


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax_ce_fwd(logits, target):
    if logits.shape != target.shape or logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs targets {target.shape}")
    return -(target * _log_softmax(logits)).sum() / logits.shape[0]


def _softmax_ce_bwd(g, logits, target):
    n = logits.shape[0]
    logp = _log_softmax(logits)
    return [g * (np.exp(logp) * target.sum(axis=-1, keepdims=True) - target) / n, -g * logp / n]


def _mse_fwd(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    return (d * d).sum() / d.size


def _mse_bwd(g, pred, target):
    d = pred - target
    gp = g * 2.0 * d / d.size
    return [gp, -gp]


@dataclass(frozen=True)
class OpRule:
    forward: Callable
    backward: Callable


OPS: dict[str, OpRule] = {
    "matmul": OpRule(lambda v, a: T.matmul(*v).data,
                     lambda g, v, y, a: list(_unbroadcast_matmul(g, v[0].data, v[1].data))),
    "add": OpRule(lambda v, a: T.add(*v).data, lambda g, v, y, a: [g, g]),
    "sub": OpRule(lambda v, a: T.sub(*v).data, lambda g, v, y, a: [g, -g]),
    "hadamard": OpRule(lambda v, a: T.hadamard(*v).data,
                       lambda g, v, y, a: [g * v[1].data, g * v[0].data]),
    "scale": OpRule(lambda v, a: T.scale(v[0], a["c"]).data, lambda g, v, y, a: [g * a["c"]]),
    "add_bias": OpRule(lambda v, a: T.add_bias(*v).data, lambda g, v, y, a: [g, g.sum(axis=0)]),
    "mul_bias": OpRule(lambda v, a: T.mul_bias(*v).data,
                       lambda g, v, y, a: [g * v[1].data, (g * v[0].data).sum(axis=0)]),
    "transpose": OpRule(lambda v, a: T.transpose(v[0]).data, lambda g, v, y, a: [g.T]),
    "reshape": OpRule(lambda v, a: T.reshape(v[0], a["shape"]).data,
                      lambda g, v, y, a: [g.reshape(v[0].shape)]),
    "concat": OpRule(
        lambda v, a: T.concat(v, a["axis"]).data,
        lambda g, v, y, a: np.split(g, np.cumsum([x.shape[a["axis"]] for x in v])[:-1], axis=a["axis"]),
    ),
    "tanh": OpRule(lambda v, a: T.tanh(v[0]).data, lambda g, v, y, a: [g * (1.0 - y * y)]),
    "relu": OpRule(lambda v, a: T.relu(v[0]).data, lambda g, v, y, a: [g * (v[0].data > 0)]),
    "instance_norm": OpRule(lambda v, a: T.instance_norm(v[0], a["eps"]).data,
                            lambda g, v, y, a: [_instance_norm_bwd(g, v[0].data, y, a["eps"])]),
    "total": OpRule(lambda v, a: np.asarray(v[0].data.sum()),
                    lambda g, v, y, a: [np.full(v[0].shape, float(g))]),
    "mse": OpRule(lambda v, a: np.asarray(_mse_fwd(v[0].data, v[1].data)),
                  lambda g, v, y, a: _mse_bwd(float(g), v[0].data, v[1].data)),
    "softmax_cross_entropy": OpRule(
        lambda v, a: np.asarray(_softmax_ce_fwd(v[0].data, v[1].data)),
        lambda g, v, y, a: _softmax_ce_bwd(float(g), v[0].data, v[1].data),
    ),
}


# -- graph -------------------------------------------------------------------


class Node:
    __slots__ = ("graph", "index", "op", "inputs", "attrs", "name")

    def __init__(self, graph, index, op, inputs=(), attrs=None, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.name = name

    def __repr__(self):
        label = self.name or self.op
        return f"Node({self.index}: {label})"

    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return self.graph.hadamard(self, other)
        return self.graph.scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


class Graph:
    """A DAG of tensor ops with named leaves.

    Leaves are either trainable parameters (``param``), plain inputs
    (``input``), or constants. ``output`` designates the node that
    :func:`forward` returns and :func:`backward` differentiates.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}
        self.trainable: list[str] = []
        self.output: Node | None = None
        self._values: list[np.ndarray | None] | None = None
        self._evaluated: Node | None = None
        self._tensors: dict[int, Tensor] = {}

    # leaves
    def _leaf(self, name, trainable):
        if name in self.leaves:
            return self.leaves[name]
        node = self._push("leaf", (), None, name)
        self.leaves[name] = node
        if trainable:
            self.trainable.append(name)
        return node

    def param(self, name: str) -> Node:
        return self._leaf(name, True)

    def input(self, name: str) -> Node:
        return self._leaf(name, False)

    def constant(self, value) -> Node:
        return self._push("constant", (), {"value": T.as_tensor(value)})

    def _push(self, op, inputs, attrs=None, name=None):
        for x in inputs:
            if not isinstance(x, Node) or x.graph is not self:
                raise GraphError(f"{op}: operand {x!r} does not belong to this graph")
        node = Node(self, len(self.nodes), op, inputs, attrs, name)
        self.nodes.append(node)
        self._values = None
        return node

    # ops (same names as pinet.tensor so block code can target either)
    def matmul(self, a, b):
        return self._push("matmul", (a, b))

    def add(self, a, b):
        return self._push("add", (a, b))

    def sub(self, a, b):
        return self._push("sub", (a, b))

    def hadamard(self, a, b):
        return self._push("hadamard", (a, b))

    def scale(self, a, c):
        return self._push("scale", (a,), {"c": float(c)})

    def add_bias(self, x, b):
        return self._push("add_bias", (x, b))

    def mul_bias(self, x, v):
        return self._push("mul_bias", (x, v))

    def transpose(self, a):
        return self._push("transpose", (a,))

    def reshape(self, a, shape):
        return self._push("reshape", (a,), {"shape": tuple(shape)})

    def concat(self, parts, axis=0):
        return self._push("concat", tuple(parts), {"axis": axis})

    def tanh(self, a):
        return self._push("tanh", (a,))

    def relu(self, a):
        return self._push("relu", (a,))

    def instance_norm(self, a, eps=1e-5):
        return self._push("instance_norm", (a,), {"eps": float(eps)})

    def total(self, a):
        return self._push("total", (a,))

    def mse(self, pred, target):
        return self._push("mse", (pred, target))

    def softmax_cross_entropy(self, logits, target):
        return self._push("softmax_cross_entropy", (logits, target))

    def _ancestors(self, out: Node) -> list[Node]:
        keep = [False] * len(self.nodes)
        keep[out.index] = True
        for node in reversed(self.nodes[: out.index + 1]):
            if keep[node.index]:
                for x in node.inputs:
                    keep[x.index] = True
        return [n for n in self.nodes[: out.index + 1] if keep[n.index]]

    def forward(self, inputs: Mapping[str, Tensor], output: Node | None = None) -> Tensor:
        out = output if output is not None else self.output
        if out is None:
            raise GraphError("graph has no output node")
        values: list[np.ndarray | None] = [None] * len(self.nodes)
        tensors: dict[int, Tensor] = {}
        for node in self._ancestors(out):
            if node.op == "leaf":
                if node.name not in inputs:
                    raise GraphError(f"unbound leaf {node.name!r}")
                t = T.as_tensor(inputs[node.name])
            elif node.op == "constant":
                t = node.attrs["value"]
            else:
                args = [tensors[x.index] for x in node.inputs]
                t = Tensor._wrap(OPS[node.op].forward(args, node.attrs))
            tensors[node.index] = t
            values[node.index] = t.data
        self._values = values
        self._tensors = tensors
        self._evaluated = out
        return tensors[out.index]

    def backward(self, seed: Tensor | None = None, wrt=None) -> Gradients:
        if self._values is None or self._evaluated is None:
            raise GraphError("backward called before forward")
        out = self._evaluated
        y = self._values[out.index]
        if seed is None:
            if y.size != 1:
                raise GraphError(f"non-scalar output {y.shape} needs an explicit seed")
            seed_arr = np.ones(y.shape)
        else:
            seed_arr = T.as_tensor(seed).data
            if seed_arr.shape != y.shape:
                raise ShapeError(f"seed shape {seed_arr.shape} != output shape {y.shape}")
        adj: list[np.ndarray | None] = [None] * len(self.nodes)
        adj[out.index] = seed_arr
        for node in reversed(self._ancestors(out)):
            g = adj[node.index]
            if g is None or node.op in ("leaf", "constant"):
                continue
            args = [self._tensors[x.index] for x in node.inputs]
            grads = OPS[node.op].backward(g, args, self._values[node.index], node.attrs)
            for x, gx in zip(node.inputs, grads):
                gx = np.asarray(gx, dtype=np.float64)
                adj[x.index] = gx if adj[x.index] is None else adj[x.index] + gx
        names = self.trainable if wrt is None else list(wrt)
        result = Gradients()
        for name in names:
            if name not in self.leaves:
                raise GraphError(f"no leaf named {name!r}")
            leaf = self.leaves[name]
            g = adj[leaf.index]
            shape = self._tensors[leaf.index].shape if leaf.index in self._tensors else None
            if g is None:
                if shape is None:
                    raise GraphError(f"leaf {name!r} was not part of the last forward pass")
                g = np.zeros(shape)
            result[name] = Tensor._wrap(np.array(g, dtype=np.float64))
        return result


def forward(graph: Graph, inputs: Mapping[str, Tensor], output: Node | None = None) -> Tensor:
    """Evaluate ``graph`` with leaf values bound from ``inputs``."""
    return graph.forward(inputs, output)


def backward(graph: Graph, seed: Tensor | None = None, wrt=None) -> Gradients:
    """Adjoints of the last forward output w.r.t. trainable leaves (or ``wrt``)."""
    return graph.backward(seed, wrt)


# -- gradient checking ---------------------------------------------------------


@dataclass
class ParamCheck:
    name: str
    max_abs_error: float
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    def failures(self) -> list[ParamCheck]:
        return [p for p in self.params if not p.passed]


def grad_check(loss_fn, params: Mapping[str, Tensor], step: float = 1e-6,
               tolerance: float = 1e-5, abs_floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return ``(loss, grads)`` where ``grads`` maps every
    name in ``params`` to its analytic gradient. For each parameter tensor the
    relative error is ``max|analytic - numeric|`` divided by the larger of the
    two gradients' max magnitudes; a parameter passes when that ratio is below
    ``tolerance`` or the absolute discrepancy is below ``abs_floor``.
    """
    params = {k: T.as_tensor(v) for k, v in params.items()}
    _, analytic = loss_fn(params)
    report = GradCheckReport()
    for name in sorted(params):
        base = params[name].numpy()
        flat = base.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(loss_fn({**params, name: Tensor(base)})[0])
            flat[i] = orig - step
            down = float(loss_fn({**params, name: Tensor(base)})[0])
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
        a = analytic[name].flat()
        abs_err = float(np.max(np.abs(a - numeric))) if a.size else 0.0
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(numeric))))
        rel_err = abs_err / scale if scale > 0 else 0.0
        report.params.append(ParamCheck(name, abs_err, rel_err, rel_err < tolerance or abs_err < abs_floor))
    return report


def graph_loss_fn(graph: Graph, fixed: Mapping[str, Tensor]):
    """Adapt a scalar-output graph to the ``loss_fn`` protocol of :func:`grad_check`."""

    def loss_fn(params):
        value = graph.forward({**fixed, **params})
        return value.item(), graph.backward(wrt=list(params))

    return loss_fn
