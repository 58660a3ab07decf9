"""SGD training of score estimators on Gaussian-mixture data.

Every parametrization is reduced to the same three things: a parameter
vector, a graph for the estimated score at the noisy input ``y``, and a loss
graph with inputs ``x`` and ``y``. For ``implicit_phi`` the score graph is the
input-gradient graph of the potential network, so each parameter gradient is
a double backprop through it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .activations import Activation
from .autodiff import ParamVector, batch_jacobian, evaluate, input_gradient_graph, value_and_grad_params
from .diagnostics import min_abs_cosine, symmetry_residuals, weight_parallelism
from .networks import TiedPsiNet, from_document, init_mlp, to_document
from .objectives import dae_loss, denoiser_score_graph, neb_loss, neb_objective, sgd_step
from .toy_data import GmmSpec, corrupt, make_batch, sample_gmm, smoothed_score

log = logging.getLogger(__name__)

PARAMETRIZATIONS = ("implicit_phi", "explicit_psi", "tied_psi", "dae_psi")
METRIC_COLUMNS = ("step", "loss", "score_rmse", "max_symmetry_residual", "min_input_cos")


@dataclass(frozen=True)
class TrainConfig:
    noise_sigma: float = 0.5
    lr: float = 0.1
    steps: int = 20000
    batch_size: int = 128
    seed: int = 0
    parametrization: str = "implicit_phi"
    hidden: tuple[int, ...] = (64, 64)
    activation: Activation = field(default_factory=Activation)
    eval_every: int = 500
    momentum: float = 0.0
    eval_size: int = 4096
    probe_count: int = 20
    divergence_threshold: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size < 1 or self.eval_size < 1 or self.probe_count < 1 or self.eval_every < 1:
            raise ValueError("batch_size, eval_size, probe_count and eval_every must be positive")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden widths must be a nonempty list of positive integers")
        if self.parametrization == "tied_psi" and len(self.hidden) != 1:
            raise ValueError("tied_psi has exactly one hidden layer")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @property
    def depth(self) -> int:
        return len(self.hidden) + 1

    def to_document(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        doc["activation"] = self.activation.to_document()
        return doc


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


class Model:
    """Parameters plus score and loss graphs for one parametrization."""

    def __init__(self, config: TrainConfig, dim: int, seed):
        self.config = config
        self.kind = config.parametrization
        sigma = config.noise_sigma
        if self.kind == "tied_psi":
            rng = np.random.default_rng(seed)
            m = config.hidden[0]
            theta0 = rng.standard_normal((m, dim)) / np.sqrt(dim)
            s = rng.standard_normal(m) / np.sqrt(m)
            self.template = TiedPsiNet(theta0, s, config.activation)
            net_graph = self.template.graph("y")
        else:
            out = 1 if self.kind == "implicit_phi" else dim
            self.template = init_mlp((dim, *config.hidden, out), config.activation, seed)
            net_graph = self.template.graph("y")
        self.params = self.template.param_vector()
        if self.kind == "implicit_phi":
            self.score_graph = input_gradient_graph(net_graph)
            self.loss_graph = neb_loss(self.score_graph, sigma)
        elif self.kind == "dae_psi":
            self.score_graph = denoiser_score_graph(net_graph, sigma)
            self.loss_graph = dae_loss(net_graph)
        else:
            self.score_graph = net_graph
            self.loss_graph = neb_loss(net_graph, sigma)

    def network(self, params: ParamVector):
        return self.template.with_params(params)

    def score(self, params: ParamVector, y) -> np.ndarray:
        return evaluate(self.score_graph, {"y": np.atleast_2d(y)}, params)

    def input_rows(self, params: ParamVector) -> np.ndarray:
        return params.get("theta0" if self.kind == "tied_psi" else "W0")


@dataclass
class Checkpoint:
    network: dict
    step: int
    config_hash: str
    metrics: list[dict]
    config: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        return {
            "schema_version": 1,
            "step": self.step,
            "config_hash": self.config_hash,
            "config": self.config,
            "network": self.network,
            "metrics": self.metrics,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "Checkpoint":
        return cls(doc["network"], int(doc["step"]), doc["config_hash"], list(doc.get("metrics", [])),
                   doc.get("config", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_document(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_document(json.loads(Path(path).read_text()))

    def load_network(self):
        return from_document(self.network)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float, checkpoint: Checkpoint, metrics: list[dict]):
        super().__init__(f"training diverged at step {step} (batch loss {loss!r})")
        self.step = step
        self.loss = loss
        self.checkpoint = checkpoint
        self.metrics = metrics


@dataclass
class Evaluator:
    """Fixed evaluation data: a large held-out batch and symmetry probe points."""

    model: Model
    spec: GmmSpec
    eval_batch: object
    oracle_scores: np.ndarray
    probes: np.ndarray

    def __call__(self, step: int, params: ParamVector) -> dict:
        inputs = self.eval_batch.as_inputs()
        loss = float(evaluate(self.model.loss_graph, inputs, params)[0, 0])
        err = self.model.score(params, self.eval_batch.y_noisy) - self.oracle_scores
        rmse = float(np.sqrt(np.sum(err * err) / err.shape[0]))
        Js = batch_jacobian(self.model.score_graph, self.probes, params, "y")
        sym = float(symmetry_residuals(Js).max()) if self.spec.dim > 1 else 0.0
        cos, _ = min_abs_cosine(self.model.input_rows(params))
        return {"step": step, "loss": loss, "score_rmse": rmse, "max_symmetry_residual": sym,
                "min_input_cos": cos}


def train(config: TrainConfig, data: GmmSpec, run_config: dict | None = None):
    """Run SGD; returns ``(checkpoint, metrics)``.

    Raises :class:`TrainingDiverged` (carrying the last finite checkpoint) if
    a batch loss becomes non-finite or exceeds ``divergence_threshold``.
    """
    cfg_doc = run_config if run_config is not None else {"train": config.to_document(), "data": data.to_document()}
    chash = config_hash(cfg_doc)
    s_init, s_data, s_eval, s_probe = np.random.SeedSequence(config.seed).spawn(4)
    model = Model(config, data.dim, s_init)
    sigma = config.noise_sigma
    eval_batch = make_batch(data, config.eval_size, sigma, s_eval)
    evaluator = Evaluator(
        model, data, eval_batch, smoothed_score(data, sigma, eval_batch.y_noisy),
        make_batch(data, config.probe_count, sigma, s_probe).y_noisy,
    )
    rng = np.random.default_rng(s_data)

    params = model.params
    velocity = np.zeros(params.size)
    metrics = [evaluator(0, params)]

    def checkpoint(step, p):
        return Checkpoint(to_document(model.network(p)), step, chash, list(metrics), cfg_doc)

    for step in range(1, config.steps + 1):
        x = sample_gmm(data, config.batch_size, rng)
        y = corrupt(x, sigma, rng)
        loss, grad = value_and_grad_params(model.loss_graph, {"x": x, "y": y}, params)
        if not np.isfinite(loss) or loss > config.divergence_threshold or not np.all(np.isfinite(grad)):
            raise TrainingDiverged(step, loss, checkpoint(step - 1, params), metrics)
        if config.momentum:
            velocity = config.momentum * velocity + grad
            params = sgd_step(params, velocity, config.lr)
        else:
            params = sgd_step(params, grad, config.lr)
        if step % config.eval_every == 0 or step == config.steps:
            metrics.append(evaluator(step, params))
            log.info("step %d loss %.5f rmse %.4f", step, metrics[-1]["loss"], metrics[-1]["score_rmse"])
    return checkpoint(config.steps, params), metrics


def write_metrics_csv(path, metrics: list[dict]) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in metrics:
            w.writerow([row["step"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])


def summarize(config: TrainConfig, data: GmmSpec, checkpoint: Checkpoint, metrics: list[dict],
              symmetry_threshold: float = 1e-2, collapse_threshold: float = 0.99,
              diverged: bool = False) -> dict:
    """Run summary: final/initial metrics, baselines, parallelism, and the field-network signature."""
    sigma = config.noise_sigma
    eval_batch = make_batch(data, config.eval_size, sigma, np.random.SeedSequence(config.seed).spawn(4)[2])
    net = checkpoint.load_network()
    par = weight_parallelism(net)
    final, initial = metrics[-1], metrics[0]
    summary = {
        "schema_version": 1,
        "config_hash": checkpoint.config_hash,
        "parametrization": config.parametrization,
        "steps_completed": checkpoint.step,
        "diverged": diverged,
        "final": final,
        "initial": initial,
        "zero_score_loss": float(data.dim * sigma**2),
        "oracle_neb_loss": neb_objective(lambda y: smoothed_score(data, sigma, y), eval_batch),
        "max_symmetry_residual_all_evals": max(m["max_symmetry_residual"] for m in metrics),
        "parallelism": {"min_input_cos": par.min_input_cos, "min_output_cos": par.min_output_cos},
    }
    if config.parametrization != "implicit_phi":
        asym = final["max_symmetry_residual"] > symmetry_threshold
        collapsed = par.min_input_cos > collapse_threshold
        horn = "both" if asym and collapsed else "asymmetric" if asym else "collapsed" if collapsed else "neither"
        summary["field_signature"] = {
            "asymmetric": asym,
            "collapsed": collapsed,
            "horn": horn,
            "symmetry_threshold": symmetry_threshold,
            "collapse_threshold": collapse_threshold,
        }
    return summary
