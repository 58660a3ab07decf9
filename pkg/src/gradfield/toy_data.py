"""Gaussian-mixture ground truth and its Gaussian-smoothed log-density and score.

If ``X`` is a mixture with diagonal covariances and ``Y = X + sigma Z``, then
``Y`` is the same mixture with every component variance inflated by
``sigma**2``. That gives closed forms for ``log p_Y`` and its gradient, which
serve as the reference score for every accuracy measurement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .autodiff import Graph, GraphBuilder

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GmmSpec:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d) diagonal covariance entries

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.array(self.means, dtype=np.float64))
        var = np.array(self.variances, dtype=np.float64)
        k, d = mu.shape
        if var.ndim == 0:
            var = np.full((k, d), float(var))
        elif var.ndim == 1:
            # one isotropic variance per component
            var = np.repeat(var.reshape(-1, 1), d, axis=1) if var.shape[0] == k else var
        var = np.atleast_2d(var)
        if w.shape[0] != k or var.shape != (k, d):
            raise ValueError(f"inconsistent mixture: weights {w.shape}, means {mu.shape}, variances {var.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be nonnegative and sum to one, got {w.tolist()}")
        if not np.all(np.isfinite(mu)) or np.any(~(var > 0)) or not np.all(np.isfinite(var)):
            raise ValueError("means must be finite and variances finite and positive")
        for arr in (w, mu, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def smoothed(self, noise_sigma: float) -> "GmmSpec":
        """Distribution of ``X + noise_sigma * Z``."""
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        return GmmSpec(self.weights, self.means, self.variances + noise_sigma**2)

    def to_document(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "GmmSpec":
        return cls(doc["weights"], doc["means"], doc["variances"])


def benchmark_gmm(d: int = 2, separation: float = 2.0) -> GmmSpec:
    """Two unit-variance components at ``+-separation e_1`` with equal weights."""
    mu = np.zeros((2, d))
    mu[0, 0], mu[1, 0] = separation, -separation
    return GmmSpec([0.5, 0.5], mu, np.ones((2, d)))


def sample_gmm(spec: GmmSpec, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(spec.n_components, size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.dim))
    return spec.means[comp] + np.sqrt(spec.variances[comp]) * z


def corrupt(x, noise_sigma: float, seed) -> np.ndarray:
    if not noise_sigma > 0:
        raise ValueError("noise_sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return x + noise_sigma * rng.standard_normal(x.shape)


@dataclass(frozen=True, eq=False)
class Batch:
    x_clean: np.ndarray
    y_noisy: np.ndarray
    noise_sigma: float
    seed: object = None

    def __post_init__(self):
        if self.x_clean.shape != self.y_noisy.shape:
            raise ValueError(f"clean {self.x_clean.shape} and noisy {self.y_noisy.shape} shapes differ")

    def __len__(self):
        return self.x_clean.shape[0]

    def as_inputs(self) -> dict[str, np.ndarray]:
        return {"x": self.x_clean, "y": self.y_noisy}


def make_batch(spec: GmmSpec, n: int, noise_sigma: float, seed) -> Batch:
    """Clean samples and their corrupted versions from independent child streams of ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_clean, s_noise = ss.spawn(2)
    x = sample_gmm(spec, n, s_clean)
    return Batch(x, corrupt(x, noise_sigma, s_noise), noise_sigma, seed)


def _component_logpdf(spec: GmmSpec, noise_sigma: float, y: np.ndarray) -> np.ndarray:
    var = spec.variances + noise_sigma**2  # (K, d)
    diff = y[:, None, :] - spec.means[None, :, :]  # (n, K, d)
    quad = np.sum(diff**2 / var[None], axis=2)
    lognorm = -0.5 * np.sum(np.log(var), axis=1) - 0.5 * spec.dim * LOG_2PI
    return np.log(spec.weights)[None, :] + lognorm[None, :] - 0.5 * quad


def smoothed_logpdf(spec: GmmSpec, noise_sigma: float, y):
    """``log p_Y(y)`` for ``Y = X + noise_sigma Z``; one point or a batch of rows."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yb = y.reshape(1, -1) if single else y
    with np.errstate(divide="ignore"):
        out = logsumexp(_component_logpdf(spec, noise_sigma, yb), axis=1)
    return out[0] if single else out


def responsibilities(spec: GmmSpec, noise_sigma: float, y) -> np.ndarray:
    yb = np.atleast_2d(np.asarray(y, dtype=np.float64))
    with np.errstate(divide="ignore"):
        lp = _component_logpdf(spec, noise_sigma, yb)
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def smoothed_score(spec: GmmSpec, noise_sigma: float, y):
    """Closed-form ``grad log p_Y(y)``: responsibility-weighted component scores."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yb = y.reshape(1, -1) if single else y
    var = spec.variances + noise_sigma**2
    r = responsibilities(spec, noise_sigma, yb)  # (n, K)
    comp_scores = -(yb[:, None, :] - spec.means[None]) / var[None]  # (n, K, d)
    out = np.einsum("nk,nkd->nd", r, comp_scores)
    return out[0] if single else out


def gmm_logpdf_graph(spec: GmmSpec, noise_sigma: float = 0.0, input_name: str = "x") -> Graph:
    """The smoothed log-density as an expression graph (quadratic forms + log-sum-exp)."""
    var = spec.variances + noise_sigma**2
    quad_w = -0.5 / var  # (K, d)
    lin_w = spec.means / var
    const = (
        np.log(np.where(spec.weights > 0, spec.weights, np.finfo(float).tiny))
        - 0.5 * np.sum(np.log(var), axis=1)
        - 0.5 * spec.dim * LOG_2PI
        - 0.5 * np.sum(spec.means**2 / var, axis=1)
    )
    b = GraphBuilder()
    y = b.input(input_name, spec.dim)
    joint = b.add(
        b.add(b.linear(b.mul(y, y), b.const(quad_w)), b.linear(y, b.const(lin_w))),
        b.const(const.reshape(1, -1)),
    )
    return b.build(b.logsumexp(joint))


def write_samples_csv(path, batch: Batch) -> None:
    """One row per sample: clean coordinates then noisy coordinates."""
    d = batch.x_clean.shape[1]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(d)])
        for xr, yr in zip(batch.x_clean, batch.y_noisy):
            w.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])
