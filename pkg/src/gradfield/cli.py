"""Command line entry point.

Exit codes: 0 success, 1 property violation, 2 usage or config error,
3 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_run_config
from .diagnostics import symmetry_report, weight_parallelism
from .networks import MlpParams, from_document
from .toy_data import GmmSpec, smoothed_score
from .training import TrainingDiverged, summarize, train, write_metrics_csv
from .verification import SUITES, run_suite

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("gradfield")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n")


def _fail(message: str, code: int = EXIT_USAGE) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_verify(args) -> int:
    out = Path(args.out or "runs/verify")
    out.mkdir(parents=True, exist_ok=True)
    checks = run_suite(args.suite, args.seed if args.seed is not None else 0)
    ok = all(c.passed for c in checks)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.value:.3e} (threshold {c.threshold:.1e}) {c.detail}")
    _write_json(out / f"verify_{args.suite}.json", {
        "schema_version": 1,
        "suite": args.suite,
        "passed": ok,
        "checks": [c.to_document() for c in checks],
    })
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc))
    tcfg = cfg.train
    if args.seed is not None:
        from dataclasses import replace
        tcfg = replace(tcfg, seed=args.seed)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = cfg.to_document()
    doc.pop("out_dir")
    doc["train"] = tcfg.to_document()
    diverged = False
    try:
        ckpt, metrics = train(tcfg, cfg.data, doc)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        ckpt, metrics, diverged = exc.checkpoint, exc.metrics, True
    write_metrics_csv(out / "metrics.csv", metrics)
    ckpt.save(out / "checkpoint.json")
    summary = summarize(tcfg, cfg.data, ckpt, metrics, cfg.diagnostics.symmetry_threshold,
                        cfg.diagnostics.collapse_threshold, diverged)
    _write_json(out / "summary.json", summary)
    final = summary["final"]
    print(f"step {ckpt.step}: loss {final['loss']:.5f} (zero-score {summary['zero_score_loss']:.4f}, "
          f"oracle {summary['oracle_neb_loss']:.5f}), score rmse {final['score_rmse']:.4f}, "
          f"max symmetry residual {final['max_symmetry_residual']:.3e}")
    if "field_signature" in summary:
        print(f"field signature: {summary['field_signature']['horn']}")
    print(f"artifacts in {out}")
    return EXIT_DIVERGED if diverged else EXIT_OK


def _load_any(path):
    doc = json.loads(Path(path).read_text())
    if "network" in doc and "kind" not in doc:
        return from_document(doc["network"]), doc.get("config", {})
    return from_document(doc), {}


def _axis(lo, hi, n):
    return np.array([(lo + hi) / 2.0]) if n == 1 else np.linspace(lo, hi, n)


def cmd_export_field(args) -> int:
    try:
        net, cfg = _load_any(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot load {args.checkpoint}: {exc}")
    fld = net.field()
    if fld.dim != 2:
        return _fail(f"unsupported dimension {fld.dim}: field export is limited to d=2")
    x0, x1, y0, y1 = args.bounds
    nx, ny = args.resolution
    if nx < 1 or ny < 1 or x1 < x0 or y1 < y0:
        return _fail("grid needs positive resolution and bounds with lo <= hi")
    oracle = None
    if args.oracle:
        if "data" not in cfg or "train" not in cfg:
            return _fail("--oracle needs a training checkpoint that records its data and noise level")
        spec = GmmSpec.from_document(cfg["data"])
        sigma = cfg["train"]["noise_sigma"]
        oracle = lambda p: smoothed_score(spec, sigma, p)  # noqa: E731
    xs, ys = _axis(x0, x1, nx), _axis(y0, y1, ny)
    pts = np.array([[x, y] for y in ys for x in xs])  # row-major: x fastest
    psi = np.asarray(fld(pts)).reshape(-1, 2)
    header = ["x1", "x2", "psi1", "psi2"]
    cols = [pts[:, 0], pts[:, 1], psi[:, 0], psi[:, 1]]
    if isinstance(net, MlpParams) and net.is_potential:
        from .networks import phi_forward
        header.append("phi")
        cols.append(np.atleast_1d(phi_forward(net, pts)))
    if oracle is not None:
        s = oracle(pts)
        header += ["oracle1", "oracle2"]
        cols += [s[:, 0], s[:, 1]]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "field.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {len(pts)} rows to {path}")
    return EXIT_OK


def cmd_symmetry_report(args) -> int:
    try:
        net, _ = _load_any(args.network)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot load {args.network}: {exc}")
    report = symmetry_report(net, n_points=args.points, seed=args.seed if args.seed is not None else 0,
                             method=args.method, ranks=True, label=str(args.network))
    try:
        par = weight_parallelism(net)
        report.meta["parallelism"] = {"min_input_cos": par.min_input_cos, "min_output_cos": par.min_output_cos}
    except ValueError as exc:
        report.meta["parallelism"] = {"error": str(exc)}
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "symmetry_report.json", report.to_document())
    report.write_csv(out / "symmetry_report.csv")
    note = " (d=1: trivially symmetric)" if report.trivially_symmetric else ""
    print(f"max symmetry residual {report.max_residual:.3e} over {len(report.residuals)} points{note}")
    if args.expect == "symmetric" and report.max_residual >= args.threshold:
        return EXIT_VIOLATION
    if args.expect == "asymmetric" and report.max_residual <= args.threshold:
        return EXIT_VIOLATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradfield", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run a fixed-seed property suite")
    v.add_argument("--suite", required=True, choices=sorted(SUITES))
    v.add_argument("--out", help="report directory (default runs/verify)")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("train", help="train a score estimator from a config document")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="run directory (overrides out_dir in the config)")
    t.add_argument("--seed", type=int, help="overrides train.seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("export-field", help="tabulate a trained d=2 field on a grid")
    e.add_argument("--checkpoint", required=True, help="checkpoint or network document")
    e.add_argument("--out", help="output directory (writes field.csv)")
    e.add_argument("--bounds", type=float, nargs=4, default=(-4.0, 4.0, -4.0, 4.0),
                   metavar=("X0", "X1", "Y0", "Y1"))
    e.add_argument("--resolution", type=int, nargs=2, default=(41, 41), metavar=("NX", "NY"))
    e.add_argument("--oracle", action="store_true", help="append the analytic smoothed score")
    e.set_defaults(func=cmd_export_field)

    s = sub.add_parser("symmetry-report", help="Jacobian symmetry diagnostics for a saved network")
    s.add_argument("--network", required=True, help="checkpoint or network document")
    s.add_argument("--out")
    s.add_argument("--points", type=int, default=20)
    s.add_argument("--seed", type=int)
    s.add_argument("--method", choices=("autodiff", "central_fd"), default="autodiff")
    s.add_argument("--expect", choices=("symmetric", "asymmetric"))
    s.add_argument("--threshold", type=float, default=1e-8)
    s.set_defaults(func=cmd_symmetry_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
