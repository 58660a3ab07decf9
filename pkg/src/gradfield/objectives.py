"""Denoising objectives as graphs, their direct numeric forms, and the SGD update."""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, GraphBuilder, ParamVector
from .toy_data import Batch


def _on_noisy_input(graph: Graph) -> GraphBuilder:
    if len(graph.inputs) != 1:
        raise ValueError(f"field graph must have exactly one input, has {sorted(graph.inputs)}")
    if graph.output_shape()[1] != graph.input_width(next(iter(graph.inputs))):
        raise ValueError("field graph must map R^d to R^d")
    (name,) = graph.inputs
    return GraphBuilder.extend(graph, rename={name: "y"})


def neb_loss(score_graph: Graph, noise_sigma: float) -> Graph:
    """``mean ||x - y - sigma^2 score(y)||^2`` over the batch, as a 1x1 graph.

    The returned graph has inputs ``x`` (clean) and ``y`` (noisy). When
    ``score_graph`` is an input-gradient graph of a potential network, the
    loss embeds that gradient and its parameter gradient is a double backprop.
    """
    if not noise_sigma > 0:
        raise ValueError("noise_sigma must be positive")
    b = _on_noisy_input(score_graph)
    y = b.input_node("y")
    x = b.input("x", b.shape(y)[1])
    resid = b.sub(b.sub(x, y), b.scale(score_graph.output, noise_sigma**2))
    return b.build(b.meansq(resid))


def dae_loss(psi_graph: Graph) -> Graph:
    """``mean ||x - psi(y)||^2`` over the batch, as a 1x1 graph."""
    b = _on_noisy_input(psi_graph)
    y = b.input_node("y")
    x = b.input("x", b.shape(y)[1])
    return b.build(b.meansq(b.sub(x, psi_graph.output)))


def denoiser_score_graph(psi_graph: Graph, noise_sigma: float) -> Graph:
    """Score implied by a denoiser: ``(psi(y) - y) / sigma^2``."""
    b = _on_noisy_input(psi_graph)
    y = b.input_node("y")
    return b.build(b.scale(b.sub(psi_graph.output, y), 1.0 / noise_sigma**2))


def _check_batch(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape != y.shape or x.shape[0] == 0:
        raise ValueError(f"clean {x.shape} and noisy {y.shape} batches must be nonempty and equal in shape")
    return x, y


def neb_objective(score_fn, batch: Batch, noise_sigma: float | None = None) -> float:
    """Direct evaluation of the empirical-Bayes objective for any callable score."""
    sigma = batch.noise_sigma if noise_sigma is None else noise_sigma
    x, y = _check_batch(batch.x_clean, batch.y_noisy)
    resid = x - y - sigma**2 * np.asarray(score_fn(y)).reshape(y.shape)
    return float(np.sum(resid * resid) / x.shape[0])


def dae_objective(psi_fn, batch: Batch) -> float:
    x, y = _check_batch(batch.x_clean, batch.y_noisy)
    resid = x - np.asarray(psi_fn(y)).reshape(y.shape)
    return float(np.sum(resid * resid) / x.shape[0])


def sgd_step(params: ParamVector, grad, lr: float) -> ParamVector:
    """``theta - lr * grad``."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.shape[0] != params.size:
        raise ValueError(f"gradient has {grad.shape[0]} entries, parameters have {params.size}")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise FloatingPointError(f"non-finite gradient entries at indices {bad[:20].tolist()}")
    return params.with_values(params.values - lr * grad)
