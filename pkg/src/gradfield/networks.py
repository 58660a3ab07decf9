"""Bias-free fully connected networks: scalar potentials and vector fields.

``MlpParams`` with ``widths[-1] == 1`` is a potential network (its input
gradient is the candidate field); with ``widths[-1] == widths[0]`` it is a
field network that outputs the candidate field directly. Two structured
field families have symmetric Jacobians by construction:

* :class:`TiedPsiNet` (one hidden layer, each readout row a multiple of the
  unit's input row), and
* :class:`ParallelPsiNet` (any depth, every input row and every output column
  a multiple of one shared direction).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .activations import Activation
from .autodiff import Graph, GraphBuilder, ParamVector, evaluate, input_gradient_graph

SCHEMA_VERSION = 1


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x, x.ndim == 1


@dataclass(frozen=True)
class GraphField:
    """A row-wise map backed by a graph; callable on one point or a batch."""

    graph: Graph
    params: ParamVector
    input_name: str = "x"

    def __call__(self, x):
        return evaluate(self.graph, {self.input_name: np.asarray(x, dtype=np.float64)}, self.params)

    @property
    def dim(self) -> int:
        return self.graph.input_width(self.input_name)


# ---------------------------------------------------------------------------
# Plain MLPs


@dataclass(frozen=True, eq=False)
class MlpParams:
    widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        if len(widths) < 2:
            raise ValueError("widths needs at least input and output sizes")
        if len(weights) != len(widths) - 1:
            raise ValueError(f"{len(widths)} widths need {len(widths) - 1} weight matrices, got {len(weights)}")
        for l, w in enumerate(weights):
            if w.shape != (widths[l + 1], widths[l]):
                raise ValueError(f"layer {l} weight has shape {w.shape}, expected {(widths[l + 1], widths[l])}")
            w.setflags(write=False)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", weights)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.widths[0]

    @property
    def out(self) -> int:
        return self.widths[-1]

    @property
    def is_potential(self) -> bool:
        return self.out == 1

    def param_vector(self) -> ParamVector:
        return ParamVector.from_arrays({f"W{l}": w for l, w in enumerate(self.weights)})

    def with_params(self, pv: ParamVector) -> "MlpParams":
        return MlpParams(self.widths, tuple(pv.get(f"W{l}") for l in range(self.depth)), self.activation)

    def graph(self, input_name: str = "x") -> Graph:
        return mlp_graph(self.widths, self.activation, input_name)

    def field(self) -> GraphField:
        """The candidate vector field: ``grad phi`` for potentials, the output itself otherwise."""
        g = self.graph()
        if self.is_potential:
            g = input_gradient_graph(g)
        return GraphField(g, self.param_vector())

    def permuted(self, layer: int, perm) -> "MlpParams":
        """Reorder hidden units of hidden ``layer`` (1-based) consistently."""
        perm = np.asarray(perm)
        ws = list(self.weights)
        ws[layer - 1] = ws[layer - 1][perm, :]
        ws[layer] = ws[layer][:, perm]
        return MlpParams(self.widths, tuple(ws), self.activation)

    def __eq__(self, other):
        return (
            isinstance(other, MlpParams)
            and self.widths == other.widths
            and self.activation == other.activation
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        )


def mlp_graph(widths: Sequence[int], activation: Activation, input_name: str = "x") -> Graph:
    b = GraphBuilder()
    h = b.input(input_name, widths[0])
    depth = len(widths) - 1
    for l in range(depth):
        w = b.param(f"W{l}", (widths[l + 1], widths[l]))
        h = b.linear(h, w)
        if l < depth - 1:
            h = b.act(h, activation)
    return b.build(h)


def init_mlp(widths: Sequence[int], activation: Activation | None = None, seed=0) -> MlpParams:
    """Gaussian weights with standard deviation ``1/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in widths)
    ws = tuple(rng.standard_normal((widths[l + 1], widths[l])) / np.sqrt(widths[l]) for l in range(len(widths) - 1))
    return MlpParams(widths, ws, activation or Activation())


def _layers(params: MlpParams, x):
    """Pre-activations of every hidden layer and the raw output."""
    h = x
    pre = []
    for l, w in enumerate(params.weights):
        z = h @ w.T
        if l < params.depth - 1:
            pre.append(z)
            h = params.activation(z)
        else:
            return pre, z


def phi_forward(params: MlpParams, x):
    """Scalar potential value(s); ``x`` is one point or a batch of rows."""
    if params.out != 1:
        raise ValueError(f"potential network must have one output, has {params.out}")
    xb, single = _as_batch(x)
    if xb.shape[1] != params.dim:
        raise ValueError(f"input dimension {xb.shape[1]} does not match network dimension {params.dim}")
    _, out = _layers(params, xb)
    return out[0, 0] if single else out[:, 0]


def psi_forward(params: MlpParams, x):
    """Vector field value(s) of an ``R^d -> R^d`` network."""
    if params.out != params.dim:
        raise ValueError(f"field network must map R^{params.dim} to itself, outputs {params.out}")
    xb, single = _as_batch(x)
    if xb.shape[1] != params.dim:
        raise ValueError(f"input dimension {xb.shape[1]} does not match network dimension {params.dim}")
    _, out = _layers(params, xb)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Closed-form gradients of potential networks


def _check_potential(phi: MlpParams, depth: int | None):
    if phi.out != 1:
        raise ValueError("closed-form gradient needs a potential network (one output)")
    if depth is not None and phi.depth != depth:
        raise ValueError(f"expected a depth-{depth} potential network, got depth {phi.depth}")


def explicit_grad_l2(phi: MlpParams, x):
    """Gradient of a one-hidden-layer potential in closed form.

    ``psi_i = sum_m v_m W0[m, i] act'(<W0[m], x>)``: a field network whose
    readout is tied to its input weights and whose nonlinearity is ``act'``.
    """
    _check_potential(phi, 2)
    xb, single = _as_batch(x)
    w0, w1 = phi.weights
    gate = phi.activation.prime(xb @ w0.T)  # (n, M)
    readout = w1[0][:, None] * w0  # tied readout rows (M, d)
    out = gate @ readout
    return out[0] if single else out


def explicit_grad_l3(phi: MlpParams, x):
    """Gradient of a two-hidden-layer potential as a product of two gate networks.

    ``psi_i = sum_{n,m} v_n W1[n,m] W0[m,i] act'(z2_n) act'(z1_m)`` where the
    first gate network is ``act'(z1)`` and the second, ``act'(z2)``, runs on
    top of the same first-layer pre-activations ``z1 = W0 x``.
    """
    _check_potential(phi, 3)
    xb, single = _as_batch(x)
    w0, w1, w2 = phi.weights
    z1 = xb @ w0.T
    gate1 = phi.activation.prime(z1)
    gate2 = phi.activation.prime(phi.activation(z1) @ w1.T)
    out = np.einsum("n,nm,mi,bn,bm->bi", w2[0], w1, w0, gate2, gate1, optimize=True)
    return out[0] if single else out


def explicit_grad(phi: MlpParams, x):
    """Closed-form gradient for any depth: a product of ``L-1`` gate factors."""
    _check_potential(phi, None)
    xb, single = _as_batch(x)
    pre, _ = _layers(phi, xb)
    g = np.broadcast_to(phi.weights[-1], (xb.shape[0], phi.weights[-1].shape[1]))
    for l in range(phi.depth - 2, -1, -1):
        g = (g * phi.activation.prime(pre[l])) @ phi.weights[l]
    return g[0] if single else g


# ---------------------------------------------------------------------------
# Structured field networks


@dataclass(frozen=True, eq=False)
class TiedPsiNet:
    """One-hidden-layer field network with readout rows ``s[m] * theta0[m]``."""

    theta0: np.ndarray
    s: np.ndarray
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        theta0 = np.array(self.theta0, dtype=np.float64)
        s = np.array(self.s, dtype=np.float64).reshape(-1)
        if theta0.ndim != 2 or s.shape[0] != theta0.shape[0]:
            raise ValueError(f"theta0 {theta0.shape} and s {s.shape} disagree on hidden size")
        theta0.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "s", s)

    @property
    def dim(self) -> int:
        return self.theta0.shape[1]

    @property
    def hidden(self) -> int:
        return self.theta0.shape[0]

    @property
    def output_weights(self) -> np.ndarray:
        """Implied readout matrix, shape ``(d, M)``."""
        return (self.s[:, None] * self.theta0).T

    def to_mlp(self) -> MlpParams:
        return MlpParams((self.dim, self.hidden, self.dim), (self.theta0, self.output_weights), self.activation)

    def __call__(self, x):
        return psi_forward(self.to_mlp(), x)

    def param_vector(self) -> ParamVector:
        return ParamVector.from_arrays({"theta0": self.theta0, "s": self.s.reshape(-1, 1)})

    def with_params(self, pv: ParamVector) -> "TiedPsiNet":
        return TiedPsiNet(pv.get("theta0"), pv.get("s").ravel(), self.activation)

    def graph(self, input_name: str = "x") -> Graph:
        b = GraphBuilder()
        x = b.input(input_name, self.dim)
        th = b.param("theta0", self.theta0.shape)
        s = b.param("s", (self.hidden, 1))
        readout = b.mul(s, th)
        hidden = b.act(b.linear(x, th), self.activation)
        return b.build(b.linear_t(hidden, readout))

    def field(self) -> GraphField:
        return GraphField(self.graph(), self.param_vector())


def tie_weights(theta0, s, activation: Activation | None = None) -> TiedPsiNet:
    return TiedPsiNet(theta0, s, activation or Activation())


@dataclass(frozen=True, eq=False)
class ParallelPsiNet:
    """Deep field network whose input rows are ``a[m] u`` and output columns ``b[n] u``."""

    u: np.ndarray
    a: np.ndarray
    inner: tuple[np.ndarray, ...]
    b: np.ndarray
    activation: Activation = field(default_factory=Activation)

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    @property
    def depth(self) -> int:
        return len(self.inner) + 2

    def tying_matrix(self) -> np.ndarray:
        """``S[n, m] = b[n] / a[m]`` so that output column n equals ``S[n, m]`` times input row m."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.b[:, None] / self.a[None, :]

    def to_mlp(self) -> MlpParams:
        w0 = np.outer(self.a, self.u)
        wl = np.outer(self.u, self.b)
        ws = (w0, *self.inner, wl)
        widths = (self.dim, *(w.shape[0] for w in ws))
        return MlpParams(widths, ws, self.activation)

    def __call__(self, x):
        return psi_forward(self.to_mlp(), x)

    def field(self) -> GraphField:
        # always the network output, even when d == 1 makes the widths look like a potential
        mlp = self.to_mlp()
        return GraphField(mlp.graph(), mlp.param_vector())


def build_parallel_psi(u, a, inner: Sequence, b, activation: Activation | None = None) -> ParallelPsiNet:
    """Parallel-weight field network; ``u`` is normalised and its length folded into ``a``."""
    u = np.array(u, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(u)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("shared direction u must be a nonzero finite vector")
    a = np.array(a, dtype=np.float64).reshape(-1) * norm
    b = np.array(b, dtype=np.float64).reshape(-1)
    inner = tuple(np.array(w, dtype=np.float64) for w in inner)
    prev = a.shape[0]
    for k, w in enumerate(inner):
        if w.ndim != 2 or w.shape[1] != prev:
            raise ValueError(f"inner weight {k} has shape {w.shape}, expected (*, {prev})")
        prev = w.shape[0]
    if b.shape[0] != prev:
        raise ValueError(f"b has {b.shape[0]} entries, last hidden layer has {prev}")
    for arr in (a, b, *inner):
        arr.setflags(write=False)
    u = u / norm
    u.setflags(write=False)
    return ParallelPsiNet(u, a, inner, b, activation or Activation())


# ---------------------------------------------------------------------------
# Serialization


def _matrix(doc_value) -> np.ndarray:
    return np.array(doc_value, dtype=np.float64)


def to_document(net) -> dict:
    """Self-describing JSON-compatible document; floats survive a round trip exactly."""
    if isinstance(net, MlpParams):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "mlp",
            "widths": list(net.widths),
            "activation": net.activation.to_document(),
            "weights": [w.tolist() for w in net.weights],
        }
    if isinstance(net, TiedPsiNet):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "tied_psi",
            "widths": [net.dim, net.hidden, net.dim],
            "activation": net.activation.to_document(),
            "theta0": net.theta0.tolist(),
            "s": net.s.tolist(),
        }
    if isinstance(net, ParallelPsiNet):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "parallel_psi",
            "widths": list(net.to_mlp().widths),
            "activation": net.activation.to_document(),
            "u": net.u.tolist(),
            "a": net.a.tolist(),
            "inner": [w.tolist() for w in net.inner],
            "b": net.b.tolist(),
        }
    raise TypeError(f"cannot serialize {type(net).__name__}")


def from_document(doc: dict):
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported network schema_version {version!r}")
    act = Activation.from_document(doc["activation"])
    kind = doc["kind"]
    if kind == "mlp":
        ws = []
        for w in doc["weights"]:
            m = _matrix(w)
            ws.append(m.reshape(m.shape[0], -1) if m.ndim == 2 else m.reshape(1, -1))
        return MlpParams(tuple(doc["widths"]), tuple(ws), act)
    if kind == "tied_psi":
        return TiedPsiNet(_matrix(doc["theta0"]), _matrix(doc["s"]), act)
    if kind == "parallel_psi":
        # stored u is already unit length; keep values bit-exact
        return ParallelPsiNet(
            _matrix(doc["u"]),
            _matrix(doc["a"]),
            tuple(_matrix(w) for w in doc["inner"]),
            _matrix(doc["b"]),
            act,
        )
    raise ValueError(f"unknown network kind {kind!r}")


def dumps(net) -> str:
    return json.dumps(to_document(net), indent=1)


def save_network(net, path) -> None:
    Path(path).write_text(dumps(net) + "\n")


def load_network(path):
    doc = json.loads(Path(path).read_text())
    if "network" in doc and "kind" not in doc:  # a training checkpoint
        doc = doc["network"]
    return from_document(doc)


def field_of(net) -> GraphField:
    """Candidate field of any network object."""
    return net.field()
