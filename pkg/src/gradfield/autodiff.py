"""Expression graphs over batched 2-D arrays with reverse-mode differentiation.

A :class:`Graph` is a flat, topologically ordered arena of primitive nodes.
Every value is a 2-D float64 array; rows are either the batch dimension
(one row per sample) or a fixed count for parameters and constants.

Two kinds of differentiation are provided:

* :func:`backprop` is ordinary numeric reverse mode over one evaluation.
* :func:`input_gradient_graph` writes the reverse sweep with respect to an
  input out as *new primitive nodes*. The result is a plain forward graph,
  so it can be placed inside a loss and differentiated again by
  :func:`backprop`. This is how parameter gradients of losses that contain
  input gradients are obtained, without any higher-order tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .activations import Activation

BATCH = None  # row marker for batch-shaped nodes


class GraphError(ValueError):
    """Raised for malformed graphs or mismatched evaluation inputs."""

    def __init__(self, message: str, node: int | None = None, op: str | None = None):
        self.node = node
        self.op = op
        where = f"node {node} ({op}): " if node is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple[int, ...]
    shape: tuple[Any, int]  # (rows or BATCH, cols)
    attr: Any = None


# ---------------------------------------------------------------------------
# Parameters


class ParamVector:
    """Named parameter matrices stored in one flat float64 vector.

    The layout assigns each named matrix a contiguous row-major block, so
    ``(name, row, col)`` maps to a unique flat index and the whole vector is
    covered exactly once.
    """

    def __init__(self, values, layout: Sequence[tuple[str, tuple[int, int]]]):
        values = np.array(values, dtype=np.float64).ravel()
        entries = []
        offset = 0
        for name, shape in layout:
            shape = tuple(int(s) for s in shape)
            if len(shape) != 2:
                raise ValueError(f"parameter {name!r} must be a matrix, got shape {shape}")
            entries.append((name, offset, shape))
            offset += shape[0] * shape[1]
        if offset != values.size:
            raise ValueError(f"layout covers {offset} entries but {values.size} values given")
        names = [e[0] for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in layout")
        values.setflags(write=False)
        self.values = values
        self._entries = tuple(entries)
        self._index = {e[0]: e for e in entries}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        mats = {k: np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in arrays.items()}
        layout = [(k, m.shape) for k, m in mats.items()]
        flat = np.concatenate([m.ravel() for m in mats.values()]) if mats else np.zeros(0)
        return cls(flat, layout)

    @property
    def layout(self) -> tuple[tuple[str, tuple[int, int]], ...]:
        return tuple((name, shape) for name, _, shape in self._entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e[0] for e in self._entries)

    @property
    def size(self) -> int:
        return self.values.size

    def __len__(self):
        return self.size

    def __contains__(self, name):
        return name in self._index

    def shape_of(self, name: str) -> tuple[int, int]:
        return self._index[name][2]

    def get(self, name: str) -> np.ndarray:
        """Read-only matrix view of parameter ``name``."""
        _, offset, shape = self._index[name]
        return self.values[offset:offset + shape[0] * shape[1]].reshape(shape)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: self.get(name).copy() for name in self.names}

    def flat_index(self, name: str, row: int, col: int) -> int:
        _, offset, shape = self._index[name]
        if not (0 <= row < shape[0] and 0 <= col < shape[1]):
            raise IndexError(f"({row}, {col}) outside {name!r} of shape {shape}")
        return offset + row * shape[1] + col

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    def flatten(self, arrays: Mapping[str, np.ndarray]) -> np.ndarray:
        """Pack per-name arrays into this layout; missing names become zeros."""
        out = np.zeros(self.size)
        for name, offset, shape in self._entries:
            if name in arrays:
                out[offset:offset + shape[0] * shape[1]] = np.asarray(arrays[name]).reshape(-1)
        return out

    def __eq__(self, other):
        return (
            isinstance(other, ParamVector)
            and self.layout == other.layout
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"ParamVector(size={self.size}, layout={list(self.layout)})"


# ---------------------------------------------------------------------------
# Graph and builder


def _broadcast(sa, sb, op):
    def dim(a, b):
        if a == b:
            return a
        if a == 1:
            return b
        if b == 1:
            return a
        raise GraphError(f"cannot broadcast shapes {sa} and {sb}", op=op)

    return (dim(sa[0], sb[0]), dim(sa[1], sb[1]))


class Graph:
    """Immutable DAG of primitives. Build with :class:`GraphBuilder`."""

    def __init__(self, nodes: Sequence[Node], outputs: Sequence[int]):
        self.nodes = tuple(nodes)
        self.outputs = tuple(outputs)
        inputs = {}
        params = {}
        for i, n in enumerate(self.nodes):
            if any(a >= i for a in n.args):
                raise GraphError("operand does not precede node", i, n.op)
            if n.op == "input":
                inputs[n.attr] = i
            elif n.op == "param":
                params[n.attr] = i
        self.inputs = inputs
        self.params = params
        needed = np.zeros(len(self.nodes), dtype=bool)
        needed[list(self.outputs)] = True
        for i in range(len(self.nodes) - 1, -1, -1):
            if needed[i]:
                needed[list(self.nodes[i].args)] = True
        self._needed = needed
        dep = np.zeros(len(self.nodes), dtype=bool)
        for i, n in enumerate(self.nodes):
            dep[i] = n.op == "input" or any(dep[a] for a in n.args)
        self._input_dependent = dep

    @property
    def output(self) -> int:
        if len(self.outputs) != 1:
            raise GraphError(f"graph has {len(self.outputs)} outputs, expected one")
        return self.outputs[0]

    def output_shape(self, k: int = 0):
        return self.nodes[self.outputs[k]].shape

    def input_width(self, name: str) -> int:
        return self.nodes[self.inputs[name]].shape[1]

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        return f"Graph({len(self.nodes)} nodes, inputs={list(self.inputs)}, params={list(self.params)})"


class GraphBuilder:
    """Incrementally appends primitive nodes; every method returns a node id."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._inputs: dict[str, int] = {}
        self._params: dict[str, int] = {}

    @classmethod
    def extend(cls, graph: Graph, rename: Mapping[str, str] | None = None) -> "GraphBuilder":
        """Start a builder holding a copy of ``graph``; node ids are preserved."""
        b = cls()
        rename = dict(rename or {})
        for n in graph.nodes:
            if n.op == "input" and n.attr in rename:
                n = Node("input", (), n.shape, rename[n.attr])
            b._append(n)
        return b

    def _append(self, node: Node) -> int:
        idx = len(self.nodes)
        if node.op == "input":
            if node.attr in self._inputs:
                raise GraphError(f"duplicate input {node.attr!r}", idx, "input")
            self._inputs[node.attr] = idx
        elif node.op == "param":
            if node.attr in self._params:
                raise GraphError(f"duplicate param {node.attr!r}", idx, "param")
            self._params[node.attr] = idx
        self.nodes.append(node)
        return idx

    def shape(self, a: int):
        return self.nodes[a].shape

    def input_node(self, name: str) -> int:
        return self._inputs[name]

    def param_node(self, name: str) -> int:
        return self._params[name]

    # leaves
    def input(self, name: str, width: int) -> int:
        return self._append(Node("input", (), (BATCH, int(width)), name))

    def param(self, name: str, shape: tuple[int, int]) -> int:
        shape = (int(shape[0]), int(shape[1]))
        return self._append(Node("param", (), shape, name))

    def const(self, value) -> int:
        value = np.array(value, dtype=np.float64)
        if value.ndim < 2:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise GraphError("constants must be at most 2-D", len(self.nodes), "const")
        value.setflags(write=False)
        return self._append(Node("const", (), value.shape, value))

    def ones_like(self, a: int) -> int:
        return self._append(Node("ones_like", (a,), self.shape(a)))

    # matrix products
    def linear(self, h: int, w: int) -> int:
        """``h @ w.T``: maps rows of width ``w.cols`` to width ``w.rows``."""
        sh, sw = self.shape(h), self.shape(w)
        if sh[1] != sw[1]:
            raise GraphError(f"linear: input width {sh[1]} vs weight {sw}", len(self.nodes), "linear")
        return self._append(Node("linear", (h, w), (sh[0], sw[0])))

    def linear_t(self, g: int, w: int) -> int:
        """``g @ w``: the transpose map of :meth:`linear`."""
        sg, sw = self.shape(g), self.shape(w)
        if sg[1] != sw[0]:
            raise GraphError(f"linear_t: input width {sg[1]} vs weight {sw}", len(self.nodes), "linear_t")
        return self._append(Node("linear_t", (g, w), (sg[0], sw[1])))

    # elementwise
    def _binary(self, op, a, b):
        shape = _broadcast(self.shape(a), self.shape(b), op)
        return self._append(Node(op, (a, b), shape))

    def add(self, a: int, b: int) -> int:
        return self._binary("add", a, b)

    def sub(self, a: int, b: int) -> int:
        return self._binary("sub", a, b)

    def mul(self, a: int, b: int) -> int:
        return self._binary("mul", a, b)

    def scale(self, a: int, c: float) -> int:
        return self._append(Node("scale", (a,), self.shape(a), float(c)))

    def act(self, a: int, activation: Activation, order: int = 0) -> int:
        """Elementwise ``activation`` derivative of the given order (0 = the function)."""
        if not activation.has_order(order + 1):
            raise GraphError(
                f"activation {activation.kind!r} lacks derivative of order {order + 1}, "
                f"needed to differentiate its order-{order} node",
                len(self.nodes),
                "act",
            )
        return self._append(Node("act", (a,), self.shape(a), (activation, int(order))))

    def exp(self, a: int) -> int:
        return self._append(Node("exp", (a,), self.shape(a)))

    # reductions
    def rowsum(self, a: int) -> int:
        return self._append(Node("rowsum", (a,), (self.shape(a)[0], 1)))

    def dot(self, a: int, b: int) -> int:
        """Row-wise inner product."""
        return self.rowsum(self.mul(a, b))

    def logsumexp(self, a: int) -> int:
        """Row-wise log-sum-exp with max-shift stabilization."""
        return self._append(Node("logsumexp", (a,), (self.shape(a)[0], 1)))

    def sumsq(self, a: int) -> int:
        return self._append(Node("sumsq", (a,), (1, 1)))

    def meansq(self, a: int) -> int:
        """Sum of squares divided by the row count (mean squared row norm)."""
        return self._append(Node("meansq", (a,), (1, 1)))

    def build(self, *outputs: int) -> Graph:
        if not outputs:
            raise GraphError("graph needs at least one output")
        return Graph(self.nodes, outputs)


# ---------------------------------------------------------------------------
# Numeric evaluation


def _as_inputs(graph: Graph, inputs) -> dict[str, np.ndarray]:
    if isinstance(inputs, Mapping):
        return dict(inputs)
    if len(graph.inputs) != 1:
        raise GraphError(f"graph has inputs {sorted(graph.inputs)}; pass a mapping")
    return {next(iter(graph.inputs)): inputs}


def forward(graph: Graph, inputs, params: ParamVector | None = None) -> list:
    """Evaluate every needed node; returns the per-node value list."""
    inputs = _as_inputs(graph, inputs)
    vals: list = [None] * len(graph.nodes)
    n_rows = None
    for i, node in enumerate(graph.nodes):
        if not graph._needed[i]:
            continue
        op, args = node.op, node.args
        if op == "input":
            if node.attr not in inputs:
                raise GraphError(f"missing input {node.attr!r}", i, op)
            x = np.asarray(inputs[node.attr], dtype=np.float64)
            if x.ndim == 1:
                x = x.reshape(1, -1)
            if x.ndim != 2 or x.shape[1] != node.shape[1]:
                raise GraphError(
                    f"input {node.attr!r} expects width {node.shape[1]}, got shape {x.shape}", i, op
                )
            if n_rows is None:
                n_rows = x.shape[0]
            elif x.shape[0] != n_rows:
                raise GraphError(f"batch size {x.shape[0]} differs from {n_rows}", i, op)
            v = x
        elif op == "param":
            if params is None or node.attr not in params:
                raise GraphError(f"missing parameter {node.attr!r}", i, op)
            v = params.get(node.attr)
            if v.shape != node.shape:
                raise GraphError(f"parameter {node.attr!r} has shape {v.shape}, expected {node.shape}", i, op)
        elif op == "const":
            v = node.attr
        elif op == "ones_like":
            v = np.ones_like(vals[args[0]])
        elif op == "linear":
            v = vals[args[0]] @ vals[args[1]].T
        elif op == "linear_t":
            v = vals[args[0]] @ vals[args[1]]
        elif op == "add":
            v = vals[args[0]] + vals[args[1]]
        elif op == "sub":
            v = vals[args[0]] - vals[args[1]]
        elif op == "mul":
            v = vals[args[0]] * vals[args[1]]
        elif op == "scale":
            v = node.attr * vals[args[0]]
        elif op == "act":
            activation, order = node.attr
            v = activation.derivative(order)(vals[args[0]])
        elif op == "exp":
            v = np.exp(vals[args[0]])
        elif op == "rowsum":
            v = vals[args[0]].sum(axis=1, keepdims=True)
        elif op == "logsumexp":
            a = vals[args[0]]
            m = a.max(axis=1, keepdims=True)
            v = m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))
        elif op == "sumsq":
            a = vals[args[0]]
            v = np.array([[np.sum(a * a)]])
        elif op == "meansq":
            a = vals[args[0]]
            v = np.array([[np.sum(a * a) / a.shape[0]]])
        else:  # pragma: no cover - builder never emits other ops
            raise GraphError(f"unknown op {op!r}", i, op)
        vals[i] = v
    return vals


def evaluate(graph: Graph, inputs, params: ParamVector | None = None):
    """Return the output value(s) of ``graph``.

    A 1-D input vector is treated as a single-row batch and the result is
    squeezed back: a scalar for width-1 outputs, a vector otherwise.
    """
    single = not isinstance(inputs, Mapping) and np.ndim(inputs) == 1
    if isinstance(inputs, Mapping):
        single = all(np.ndim(v) == 1 for v in inputs.values()) and len(inputs) > 0
    vals = forward(graph, inputs, params)
    outs = [vals[o] for o in graph.outputs]
    if single:
        outs = [o[0, 0] if o.shape[1] == 1 else o[0] for o in outs]
    return outs[0] if len(outs) == 1 else tuple(outs)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape[0] != shape[0] and shape[0] == 1:
        g = g.sum(axis=0, keepdims=True)
    if g.shape[1] != shape[1] and shape[1] == 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def backprop(graph: Graph, vals: list, seed: np.ndarray, output: int = 0) -> list:
    """Numeric reverse sweep from ``graph.outputs[output]`` with adjoint ``seed``.

    Returns the per-node adjoint list (``None`` where no gradient flows).
    """
    out = graph.outputs[output]
    adj: list = [None] * len(graph.nodes)
    adj[out] = np.broadcast_to(np.asarray(seed, dtype=np.float64), vals[out].shape)

    def acc(k, g):
        if graph.nodes[k].op in ("const", "ones_like"):
            return
        g = _unbroadcast(g, vals[k].shape)
        adj[k] = g if adj[k] is None else adj[k] + g

    for i in range(out, -1, -1):
        g = adj[i]
        if g is None:
            continue
        node = graph.nodes[i]
        op, args = node.op, node.args
        if op in ("input", "param", "const", "ones_like"):
            continue
        if op == "linear":
            h, w = args
            acc(h, g @ vals[w])
            acc(w, g.T @ vals[h])
        elif op == "linear_t":
            h, w = args
            acc(h, g @ vals[w].T)
            acc(w, vals[h].T @ g)
        elif op == "add":
            acc(args[0], g)
            acc(args[1], g)
        elif op == "sub":
            acc(args[0], g)
            acc(args[1], -g)
        elif op == "mul":
            a, b = args
            acc(a, g * vals[b])
            acc(b, g * vals[a])
        elif op == "scale":
            acc(args[0], node.attr * g)
        elif op == "act":
            activation, order = node.attr
            acc(args[0], g * activation.derivative(order + 1)(vals[args[0]]))
        elif op == "exp":
            acc(args[0], g * vals[i])
        elif op == "rowsum":
            acc(args[0], np.broadcast_to(g, vals[args[0]].shape))
        elif op == "logsumexp":
            a = vals[args[0]]
            acc(args[0], g * np.exp(a - vals[i]))
        elif op == "sumsq":
            acc(args[0], 2.0 * g * vals[args[0]])
        elif op == "meansq":
            a = vals[args[0]]
            acc(args[0], (2.0 / a.shape[0]) * g * a)
    return adj


# ---------------------------------------------------------------------------
# Gradients


def input_gradient_graph(graph: Graph, wrt: str | None = None) -> Graph:
    """Graph whose output is the gradient of ``graph``'s scalar output w.r.t. an input.

    ``graph`` must produce one value per sample (output shape ``(batch, 1)``);
    the returned graph outputs one gradient row per sample. Samples never
    interact, so each row is the gradient at that sample alone.
    """
    out = graph.output
    shape = graph.nodes[out].shape
    if shape != (BATCH, 1):
        raise GraphError(f"input gradient needs a per-sample scalar output, got shape {shape}", out,
                         graph.nodes[out].op)
    if wrt is None:
        if len(graph.inputs) != 1:
            raise GraphError(f"graph has inputs {sorted(graph.inputs)}; name one with wrt=")
        wrt = next(iter(graph.inputs))
    target = graph.inputs[wrt]
    dep = graph._input_dependent

    b = GraphBuilder.extend(graph)
    adj: dict[int, int] = {out: b.ones_like(out)}

    def acc(k, g):
        if not dep[k]:
            return
        adj[k] = g if k not in adj else b.add(adj[k], g)

    def fit(g, k):
        # undo column broadcasting onto a width-1 operand
        if b.shape(k)[1] == 1 and b.shape(g)[1] != 1:
            return b.rowsum(g)
        if b.shape(k)[0] != b.shape(g)[0]:
            raise GraphError("row broadcasting of an input-dependent operand", k, b.nodes[k].op)
        return g

    for i in range(out, -1, -1):
        if i not in adj or not dep[i]:
            continue
        g = adj[i]
        node = graph.nodes[i]
        op, args = node.op, node.args
        if op == "input":
            continue
        if op == "linear":
            acc(args[0], b.linear_t(g, args[1]))
            if dep[args[1]]:
                raise GraphError("input-dependent weight matrix", i, op)
        elif op == "linear_t":
            acc(args[0], b.linear(g, args[1]))
            if dep[args[1]]:
                raise GraphError("input-dependent weight matrix", i, op)
        elif op == "add":
            for a in args:
                if dep[a]:
                    acc(a, fit(g, a))
        elif op == "sub":
            if dep[args[0]]:
                acc(args[0], fit(g, args[0]))
            if dep[args[1]]:
                acc(args[1], b.scale(fit(g, args[1]), -1.0))
        elif op == "mul":
            x, y = args
            if dep[x]:
                acc(x, fit(b.mul(g, y), x))
            if dep[y]:
                acc(y, fit(b.mul(g, x), y))
        elif op == "scale":
            acc(args[0], b.scale(g, node.attr))
        elif op == "act":
            activation, order = node.attr
            acc(args[0], b.mul(g, b.act(args[0], activation, order + 1)))
        elif op == "exp":
            acc(args[0], b.mul(g, i))
        elif op == "rowsum":
            a = args[0]
            acc(a, g if b.shape(a)[1] == 1 else b.mul(g, b.ones_like(a)))
        elif op == "logsumexp":
            a = args[0]
            acc(a, b.mul(g, b.exp(b.sub(a, i))))
        else:
            raise GraphError("no per-sample input-gradient rule (op mixes batch rows)", i, op)

    result = adj.get(target)
    if result is None:
        result = b.scale(target, 0.0)  # output does not depend on this input
    return b.build(result)


def grad_input(graph: Graph, x, params: ParamVector | None = None, wrt: str | None = None):
    """Input gradient of a per-sample scalar graph.

    Returns ``(gradient, gradient_graph)``. The gradient is obtained by
    evaluating ``gradient_graph``, so the two agree exactly.
    """
    ggraph = input_gradient_graph(graph, wrt)
    if isinstance(x, Mapping):
        inputs = x
    else:
        name = wrt if wrt is not None else next(iter(graph.inputs))
        inputs = {name: x} if len(graph.inputs) > 1 or wrt is not None else x
    value = evaluate(ggraph, inputs, params)
    if np.ndim(value) == 0:
        value = np.atleast_1d(value)
    return value, ggraph


def grad_params(graph: Graph, inputs, params: ParamVector) -> np.ndarray:
    """Gradient of a scalar (1x1) output w.r.t. every parameter, flat in ``params`` layout."""
    out = graph.output
    if graph.nodes[out].shape != (1, 1):
        raise GraphError(f"parameter gradient needs a scalar output, got {graph.nodes[out].shape}",
                         out, graph.nodes[out].op)
    vals = forward(graph, inputs, params)
    adj = backprop(graph, vals, np.ones((1, 1)))
    grads = {name: adj[i] for name, i in graph.params.items() if adj[i] is not None}
    return params.flatten(grads)


def value_and_grad_params(graph: Graph, inputs, params: ParamVector) -> tuple[float, np.ndarray]:
    out = graph.output
    vals = forward(graph, inputs, params)
    adj = backprop(graph, vals, np.ones((1, 1)))
    grads = {name: adj[i] for name, i in graph.params.items() if adj[i] is not None}
    return float(vals[out][0, 0]), params.flatten(grads)


def batch_jacobian(graph: Graph, x, params: ParamVector | None = None, wrt: str | None = None) -> np.ndarray:
    """Per-sample Jacobians ``J[s, i, j] = d out_i / d in_j`` of a row-wise field.

    One reverse sweep per output column; valid because rows never interact.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if wrt is None:
        if len(graph.inputs) != 1:
            raise GraphError(f"graph has inputs {sorted(graph.inputs)}; name one with wrt=")
        wrt = next(iter(graph.inputs))
    vals = forward(graph, {wrt: x}, params)
    out = vals[graph.output]
    target = graph.inputs[wrt]
    n, k = out.shape
    jac = np.zeros((n, k, x.shape[1]))
    for i in range(k):
        seed = np.zeros((n, k))
        seed[:, i] = 1.0
        adj = backprop(graph, vals, seed)
        if adj[target] is not None:
            jac[:, i, :] = adj[target]
    return jac
