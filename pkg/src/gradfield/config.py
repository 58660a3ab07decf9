"""Run configuration documents (JSON) with field-level validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .activations import Activation
from .toy_data import GmmSpec, benchmark_gmm
from .training import PARAMETRIZATIONS, TrainConfig

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class DiagnosticsConfig:
    probe_count: int = 20
    fd_step: float = 1e-5
    symmetry_threshold: float = 1e-2
    collapse_threshold: float = 0.99


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    data: GmmSpec
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    out_dir: str = "runs/default"

    def to_document(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "out_dir": self.out_dir,
            "train": self.train.to_document(),
            "data": self.data.to_document(),
            "diagnostics": {
                "probe_count": self.diagnostics.probe_count,
                "fd_step": self.diagnostics.fd_step,
                "symmetry_threshold": self.diagnostics.symmetry_threshold,
                "collapse_threshold": self.diagnostics.collapse_threshold,
            },
        }


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _check_keys(doc, allowed, path):
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")


def _get(doc, key, kind, path, default, check=None, message=""):
    if key not in doc:
        return default
    v = doc[key]
    where = f"{path}.{key}" if path else key
    if kind == "int" and not _is_int(v):
        raise ConfigError(where, "must be an integer")
    if kind == "num" and not _is_num(v):
        raise ConfigError(where, "must be a number")
    if kind == "str" and not isinstance(v, str):
        raise ConfigError(where, "must be a string")
    if check is not None and not check(v):
        raise ConfigError(where, message)
    return v


_TRAIN_KEYS = ("noise_sigma", "lr", "steps", "batch_size", "seed", "parametrization", "hidden",
               "activation", "eval_every", "momentum", "eval_size", "divergence_threshold")


def _parse_train(doc, probe_count) -> TrainConfig:
    p = "train"
    _check_keys(doc, _TRAIN_KEYS, p)
    d = TrainConfig()
    hidden = doc.get("hidden", list(d.hidden))
    if not isinstance(hidden, list) or not hidden or not all(_is_int(h) and h > 0 for h in hidden):
        raise ConfigError(f"{p}.hidden", "must be a nonempty list of positive integers")
    act_doc = doc.get("activation", d.activation.to_document())
    _check_keys(act_doc, ("kind", "beta"), f"{p}.activation")
    try:
        activation = Activation.from_document(act_doc)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{p}.activation", str(exc)) from None
    par = _get(doc, "parametrization", "str", p, d.parametrization, lambda v: v in PARAMETRIZATIONS,
               f"must be one of {', '.join(PARAMETRIZATIONS)}")
    if par == "tied_psi" and len(hidden) != 1:
        raise ConfigError(f"{p}.hidden", "tied_psi needs exactly one hidden layer")
    return TrainConfig(
        noise_sigma=float(_get(doc, "noise_sigma", "num", p, d.noise_sigma, lambda v: v > 0, "must be positive")),
        lr=float(_get(doc, "lr", "num", p, d.lr, lambda v: v >= 0, "must be nonnegative")),
        steps=_get(doc, "steps", "int", p, d.steps, lambda v: v >= 0, "must be nonnegative"),
        batch_size=_get(doc, "batch_size", "int", p, d.batch_size, lambda v: v >= 1, "must be positive"),
        seed=_get(doc, "seed", "int", p, d.seed, lambda v: v >= 0, "must be nonnegative"),
        parametrization=par,
        hidden=tuple(hidden),
        activation=activation,
        eval_every=_get(doc, "eval_every", "int", p, d.eval_every, lambda v: v >= 1, "must be positive"),
        momentum=float(_get(doc, "momentum", "num", p, d.momentum, lambda v: 0 <= v < 1, "must lie in [0, 1)")),
        eval_size=_get(doc, "eval_size", "int", p, d.eval_size, lambda v: v >= 1, "must be positive"),
        probe_count=probe_count,
        divergence_threshold=float(_get(doc, "divergence_threshold", "num", p, d.divergence_threshold,
                                        lambda v: v > 0, "must be positive")),
    )


def _parse_data(doc) -> GmmSpec:
    if doc is None:
        return benchmark_gmm()
    _check_keys(doc, ("weights", "means", "variances"), "data")
    for key in ("weights", "means", "variances"):
        if key not in doc:
            raise ConfigError(f"data.{key}", "missing")
    try:
        return GmmSpec.from_document(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError("data", str(exc)) from None


def _parse_diagnostics(doc) -> DiagnosticsConfig:
    p = "diagnostics"
    doc = doc or {}
    _check_keys(doc, ("probe_count", "fd_step", "symmetry_threshold", "collapse_threshold"), p)
    d = DiagnosticsConfig()
    return DiagnosticsConfig(
        probe_count=_get(doc, "probe_count", "int", p, d.probe_count, lambda v: v >= 1, "must be positive"),
        fd_step=float(_get(doc, "fd_step", "num", p, d.fd_step, lambda v: v > 0, "must be positive")),
        symmetry_threshold=float(_get(doc, "symmetry_threshold", "num", p, d.symmetry_threshold,
                                      lambda v: v > 0, "must be positive")),
        collapse_threshold=float(_get(doc, "collapse_threshold", "num", p, d.collapse_threshold,
                                      lambda v: 0 < v <= 1, "must lie in (0, 1]")),
    )


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a whole config document before anything is computed."""
    _check_keys(doc, ("schema_version", "out_dir", "train", "data", "diagnostics"), "")
    version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version!r}")
    out_dir = _get(doc, "out_dir", "str", "", "runs/default")
    diagnostics = _parse_diagnostics(doc.get("diagnostics"))
    train = _parse_train(doc.get("train", {}), diagnostics.probe_count)
    data = _parse_data(doc.get("data"))
    return RunConfig(train, data, diagnostics, out_dir)


def load_run_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return parse_run_config(doc)
