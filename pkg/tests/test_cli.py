import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gradfield.cli import main
from gradfield.config import ConfigError, load_run_config, parse_run_config
from gradfield.networks import MlpParams, build_parallel_psi, init_mlp, save_network

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = {
    "schema_version": 1,
    "train": {"steps": 30, "eval_every": 10, "eval_size": 128, "batch_size": 32, "hidden": [8, 8]},
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.mark.parametrize("suite", ["autodiff", "closed_form", "oracle", "symmetry"])
def test_verify_suites_pass(suite, tmp_path):
    assert main(["verify", "--suite", suite, "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / f"verify_{suite}.json").read_text())
    assert report["passed"] and report["schema_version"] == 1


def test_verify_symmetry_reports_expected_violation(tmp_path):
    main(["verify", "--suite", "symmetry", "--out", str(tmp_path)])
    checks = {c["name"]: c for c in json.loads((tmp_path / "verify_symmetry.json").read_text())["checks"]}
    random_psi = checks["random_deep_psi_asymmetric"]
    assert random_psi["passed"] and random_psi["value"] >= 99


def test_verify_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--suite", "foo"])
    assert info.value.code == 2


def test_train_writes_artifacts_and_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, TINY)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "checkpoint.json", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    for key in ("final", "initial", "zero_score_loss", "oracle_neb_loss", "parallelism"):
        assert key in summary
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "9"]) == 0
    assert (tmp_path / "c" / "metrics.csv").read_bytes() != (tmp_path / "a" / "metrics.csv").read_bytes()


def test_train_zero_steps_summary(tmp_path):
    doc = {**TINY, "train": {**TINY["train"], "steps": 0}}
    assert main(["train", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["steps_completed"] == 0 and summary["final"] == summary["initial"]
    assert len((tmp_path / "r" / "metrics.csv").read_text().splitlines()) == 2


def test_train_explicit_records_horn(tmp_path):
    doc = {**TINY, "train": {**TINY["train"], "parametrization": "explicit_psi"}}
    assert main(["train", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["field_signature"]["horn"] in ("asymmetric", "collapsed", "both", "neither")


def test_train_divergence_exit_code(tmp_path):
    doc = {**TINY, "train": {**TINY["train"], "lr": 1e4, "steps": 200}}
    assert main(["train", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "r")]) == 3
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["diverged"] is True
    assert (tmp_path / "r" / "checkpoint.json").exists()


@pytest.mark.parametrize(
    "patch, where",
    [
        ({"train": {"lr": -1}}, "train.lr"),
        ({"train": {"steps": 1.5}}, "train.steps"),
        ({"train": {"learning_rate": 0.1}}, "train.learning_rate"),
        ({"train": {"parametrization": "relu"}}, "train.parametrization"),
        ({"train": {"hidden": []}}, "train.hidden"),
        ({"data": {"weights": [0.5, 0.4], "means": [[0.0], [1.0]], "variances": [[1.0], [1.0]]}}, "data"),
        ({"diagnostics": {"collapse_threshold": 2.0}}, "diagnostics.collapse_threshold"),
        ({"colour": "blue"}, "colour"),
    ],
)
def test_invalid_config_reports_field(patch, where, tmp_path, capsys):
    doc = {**TINY, **patch}
    with pytest.raises(ConfigError) as info:
        parse_run_config(doc)
    assert info.value.path == where
    assert main(["train", "--config", write_config(tmp_path, doc)]) == 2
    assert where in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == 2


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_parse(name):
    cfg = load_run_config(CONFIGS / name)
    assert cfg.out_dir.startswith("runs/")


def test_smoke_config_runs(tmp_path):
    assert main(["train", "--config", str(CONFIGS / "smoke.json"), "--out", str(tmp_path)]) == 0


def read_csv(path):
    rows = list(csv.reader(open(path)))
    return rows[0], np.array(rows[1:], dtype=float)


def test_export_field_zero_network(tmp_path):
    net = MlpParams((2, 3, 2), (np.ones((3, 2)), np.zeros((2, 3))))
    save_network(net, tmp_path / "n.json")
    assert main(["export-field", "--checkpoint", str(tmp_path / "n.json"), "--out", str(tmp_path),
                 "--resolution", "4", "3"]) == 0
    header, data = read_csv(tmp_path / "field.csv")
    assert header == ["x1", "x2", "psi1", "psi2"]
    assert data.shape == (12, 4)
    np.testing.assert_array_equal(data[:, 2:], 0.0)
    # row-major scan, x1 varies fastest
    np.testing.assert_array_equal(data[:4, 1], -4.0)
    np.testing.assert_array_equal(data[:4, 0], np.linspace(-4, 4, 4))


def test_export_field_potential_and_oracle(tmp_path):
    cfg = write_config(tmp_path, TINY)
    main(["train", "--config", cfg, "--out", str(tmp_path / "run")])
    ckpt = str(tmp_path / "run" / "checkpoint.json")
    assert main(["export-field", "--checkpoint", ckpt, "--out", str(tmp_path), "--oracle",
                 "--bounds", "0", "0", "0", "0", "--resolution", "1", "1"]) == 0
    header, data = read_csv(tmp_path / "field.csv")
    assert header == ["x1", "x2", "psi1", "psi2", "phi", "oracle1", "oracle2"]
    np.testing.assert_array_equal(data[0, :2], 0.0)
    np.testing.assert_allclose(data[0, 5:], 0.0, atol=1e-15)


def test_export_field_rejects_other_dimensions(tmp_path, capsys):
    save_network(init_mlp((3, 4, 1)), tmp_path / "n.json")
    assert main(["export-field", "--checkpoint", str(tmp_path / "n.json"), "--out", str(tmp_path)]) == 2
    assert "unsupported dimension" in capsys.readouterr().err


def test_symmetry_report_expectations(tmp_path):
    save_network(init_mlp((3, 6, 6, 1), seed=1), tmp_path / "phi.json")
    save_network(init_mlp((4, 16, 16, 4), seed=1), tmp_path / "psi.json")
    save_network(build_parallel_psi([1.0, 1.0, 0.0], [1.0, 2.0], [np.eye(2)], [0.5, -1.0]), tmp_path / "par.json")
    out = str(tmp_path / "rep")
    assert main(["symmetry-report", "--network", str(tmp_path / "phi.json"), "--out", out, "--expect", "symmetric"]) == 0
    assert main(["symmetry-report", "--network", str(tmp_path / "par.json"), "--out", out, "--expect", "symmetric"]) == 0
    assert main(["symmetry-report", "--network", str(tmp_path / "psi.json"), "--out", out, "--expect", "symmetric"]) == 1
    assert main(["symmetry-report", "--network", str(tmp_path / "psi.json"), "--out", out,
                 "--expect", "asymmetric", "--threshold", "1e-2"]) == 0
    doc = json.loads((tmp_path / "rep" / "symmetry_report.json").read_text())
    assert len(doc["points"]) == 20 and doc["max_residual"] > 1e-2
    assert main(["symmetry-report", "--network", str(tmp_path / "missing.json")]) == 2
