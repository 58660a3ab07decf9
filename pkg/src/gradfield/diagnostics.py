"""Jacobians, symmetry residuals, weight-parallelism statistics and FD oracles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .autodiff import batch_jacobian
from .networks import GraphField, MlpParams, ParallelPsiNet, TiedPsiNet

DEFAULT_FD_STEP = 1e-5
RESIDUAL_FLOOR = 1e-12
REPORT_SCHEMA_VERSION = 1


def _finite_or_raise(value, what, coord=None):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        where = f" at coordinate {coord}" if coord is not None else ""
        raise FloatingPointError(f"non-finite {what}{where}")
    return value


def fd_gradient(f: Callable, x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central differences ``(f(x + h e_j) - f(x - h e_j)) / 2h``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64).reshape(-1)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = _finite_or_raise(f(x + e), "function value", j)
        fm = _finite_or_raise(f(x - e), "function value", j)
        g[j] = (float(fp) - float(fm)) / (2 * h)
    return g


def fd_jacobian(field_fn: Callable, x, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64).reshape(-1)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = _finite_or_raise(field_fn(x + e), "field value", j).reshape(-1)
        fm = _finite_or_raise(field_fn(x - e), "field value", j).reshape(-1)
        cols.append((fp - fm) / (2 * h))
    return np.stack(cols, axis=1)


def jacobian(field_fn, x, method: str = "autodiff", h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """``J[i, j] = d field_i / d x_j`` at one point.

    ``method="autodiff"`` needs a graph-backed field (anything with a
    ``.field()`` method, or a :class:`GraphField`); ``"central_fd"`` works for
    any callable.
    """
    if hasattr(field_fn, "field") and not isinstance(field_fn, GraphField):
        field_fn = field_fn.field()
    x = np.array(x, dtype=np.float64).reshape(-1)
    if method == "central_fd":
        return fd_jacobian(field_fn, x, h)
    if method != "autodiff":
        raise ValueError(f"unknown jacobian method {method!r}")
    if not isinstance(field_fn, GraphField):
        raise TypeError("autodiff jacobian needs a graph-backed field")
    _finite_or_raise(field_fn(x), "field value")
    jac = batch_jacobian(field_fn.graph, x[None, :], field_fn.params, field_fn.input_name)[0]
    for j in range(jac.shape[1]):
        _finite_or_raise(jac[:, j], "jacobian column", j)
    return jac


def jacobians(field_fn, points) -> np.ndarray:
    """Autodiff Jacobians at a batch of points, shape ``(n, d, d)``."""
    if hasattr(field_fn, "field") and not isinstance(field_fn, GraphField):
        field_fn = field_fn.field()
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return batch_jacobian(field_fn.graph, pts, field_fn.params, field_fn.input_name)


def symmetry_residual(J) -> float:
    """Relative asymmetry ``||J - J^T||_F / max(||J||_F, 1e-12)``."""
    J = np.asarray(J, dtype=np.float64)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"symmetry residual needs a square matrix, got shape {J.shape}")
    return float(np.linalg.norm(J - J.T) / max(np.linalg.norm(J), RESIDUAL_FLOOR))


def symmetry_residuals(Js) -> np.ndarray:
    Js = np.asarray(Js, dtype=np.float64)
    num = np.linalg.norm(Js - np.swapaxes(Js, 1, 2), axis=(1, 2))
    den = np.maximum(np.linalg.norm(Js, axis=(1, 2)), RESIDUAL_FLOOR)
    return num / den


def numerical_rank(J, rtol: float = 1e-8) -> int:
    s = np.linalg.svd(np.asarray(J, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


# ---------------------------------------------------------------------------
# Weight parallelism


class Parallelism(NamedTuple):
    min_input_cos: float
    min_output_cos: float
    zero_input_rows: tuple[int, ...] = ()
    zero_output_cols: tuple[int, ...] = ()


def min_abs_cosine(vectors, floor: float = 1e-12) -> tuple[float, tuple[int, ...]]:
    """Smallest ``|cos|`` over pairs of nonzero rows, plus the indices of excluded zero rows."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(v, axis=1)
    zero = tuple(int(i) for i in np.flatnonzero(norms <= floor))
    keep = norms > floor
    if not keep.any():
        raise ValueError("all weight vectors are zero")
    u = v[keep] / norms[keep, None]
    if u.shape[0] < 2:
        return 1.0, zero
    c = np.abs(u @ u.T)
    iu = np.triu_indices(u.shape[0], 1)
    return float(min(1.0, c[iu].min())), zero


def _first_last(net) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(net, ParallelPsiNet):
        net = net.to_mlp()
    if isinstance(net, TiedPsiNet):
        return net.theta0, net.output_weights.T
    if isinstance(net, MlpParams):
        return net.weights[0], net.weights[-1].T  # output weight vectors are columns
    raise TypeError(f"unsupported network type {type(net).__name__}")


def weight_parallelism(net) -> Parallelism:
    """Minimum pairwise ``|cos|`` among input-weight rows and among output-weight columns."""
    first, last = _first_last(net)
    cin, zin = min_abs_cosine(first)
    cout, zout = min_abs_cosine(last)
    return Parallelism(cin, cout, zin, zout)


# ---------------------------------------------------------------------------
# Reports


def probe_points(d: int, n: int = 20, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, d))


@dataclass
class SymmetryReport:
    points: np.ndarray
    residuals: np.ndarray
    max_residual: float
    jacobian_rank_estimates: list[int] | None = None
    trivially_symmetric: bool = False
    label: str = ""
    meta: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        doc = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "label": self.label,
            "dim": int(self.points.shape[1]),
            "trivially_symmetric": self.trivially_symmetric,
            "max_residual": float(self.max_residual),
            "points": [
                {"x": p.tolist(), "residual": float(r)} for p, r in zip(self.points, self.residuals)
            ],
        }
        if self.jacobian_rank_estimates is not None:
            doc["jacobian_rank_estimates"] = list(self.jacobian_rank_estimates)
        if self.meta:
            doc["meta"] = self.meta
        return doc

    def write_csv(self, path) -> None:
        d = self.points.shape[1]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            header = [f"x{i + 1}" for i in range(d)] + ["residual"]
            if self.jacobian_rank_estimates is not None:
                header.append("rank")
            w.writerow(header)
            for k, (p, r) in enumerate(zip(self.points, self.residuals)):
                row = [repr(float(v)) for v in p] + [repr(float(r))]
                if self.jacobian_rank_estimates is not None:
                    row.append(self.jacobian_rank_estimates[k])
                w.writerow(row)


def symmetry_report(field_fn, points=None, n_points: int = 20, seed=0, method: str = "autodiff",
                    h: float = DEFAULT_FD_STEP, ranks: bool = False, label: str = "") -> SymmetryReport:
    """Symmetry residual of the field's Jacobian at each test point."""
    if hasattr(field_fn, "field") and not isinstance(field_fn, GraphField):
        field_fn = field_fn.field()
    if points is None:
        d = field_fn.dim
        points = probe_points(d, n_points, seed)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if method == "autodiff":
        Js = jacobians(field_fn, points)
    else:
        Js = np.stack([jacobian(field_fn, p, method, h) for p in points])
    res = symmetry_residuals(Js)
    return SymmetryReport(
        points=points,
        residuals=res,
        max_residual=float(res.max()),
        jacobian_rank_estimates=[numerical_rank(J) for J in Js] if ranks else None,
        trivially_symmetric=points.shape[1] == 1,
        label=label,
    )
