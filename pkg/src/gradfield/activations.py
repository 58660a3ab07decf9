"""Smooth activation functions with registered derivatives.

Each activation kind registers a list ``[f, f', f'', ...]``. The autodiff
core asks for derivative orders by index, and refuses to build a graph that
would need an order that is not registered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

ArrayFn = Callable[[np.ndarray], np.ndarray]

_REGISTRY: dict[str, tuple[ArrayFn, ...]] = {}


def register_activation(kind: str, *derivatives: ArrayFn) -> None:
    """Register ``kind`` with its value function followed by successive derivatives."""
    if not derivatives:
        raise ValueError("at least the activation itself must be given")
    _REGISTRY[kind] = tuple(derivatives)


def _silu_fns(beta: float) -> tuple[ArrayFn, ...]:
    def f(x):
        return x * expit(beta * x)

    def df(x):
        s = expit(beta * x)
        return s + beta * x * s * (1.0 - s)

    def d2f(x):
        s = expit(beta * x)
        return beta * s * (1.0 - s) * (2.0 + beta * x * (1.0 - 2.0 * s))

    return f, df, d2f


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid_prime(x):
    s = expit(x)
    return s * (1.0 - s)


def _tanh_prime(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _tanh_second(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


register_activation("softplus", _softplus, expit, _sigmoid_prime)
register_activation("tanh", np.tanh, _tanh_prime, _tanh_second)


@dataclass(frozen=True)
class Activation:
    """An elementwise nonlinearity, identified by ``kind`` (and ``beta`` for silu_beta).

    ``silu_beta`` is ``x / (1 + exp(-beta x))``; it tends to ReLU as beta grows
    but stays twice differentiable for every finite beta.
    """

    kind: str = "silu_beta"
    beta: float = 4.0

    def __post_init__(self):
        if self.kind == "silu_beta":
            if not (np.isfinite(self.beta) and self.beta > 0):
                raise ValueError(f"silu_beta needs a finite positive beta, got {self.beta}")
        elif self.kind not in _REGISTRY:
            raise ValueError(f"unknown activation kind {self.kind!r}")

    def _fns(self) -> tuple[ArrayFn, ...]:
        if self.kind == "silu_beta":
            return _silu_fns(float(self.beta))
        return _REGISTRY[self.kind]

    @property
    def max_order(self) -> int:
        """Highest registered derivative order (0 means only the function itself)."""
        return len(self._fns()) - 1

    def has_order(self, order: int) -> bool:
        return 0 <= order <= self.max_order

    def derivative(self, order: int) -> ArrayFn:
        if not self.has_order(order):
            raise ValueError(
                f"activation {self.kind!r} has no registered derivative of order {order}"
            )
        return self._fns()[order]

    def __call__(self, x):
        return self._fns()[0](np.asarray(x, dtype=np.float64))

    def prime(self, x):
        return self.derivative(1)(np.asarray(x, dtype=np.float64))

    def second(self, x):
        return self.derivative(2)(np.asarray(x, dtype=np.float64))

    def to_document(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "silu_beta":
            doc["beta"] = float(self.beta)
        return doc

    @classmethod
    def from_document(cls, doc: dict) -> "Activation":
        kind = doc["kind"]
        if kind == "silu_beta":
            return cls(kind, float(doc.get("beta", 4.0)))
        return cls(kind)
