"""Command line front end: config-driven, reproducible CSV/JSON artifacts.

Subcommands::

    psde simulate --config exp.toml --out results/
    psde fisher   --config exp.toml --out results/
    psde estimate --config exp.toml --out results/ [pathfile]
    psde study    --config exp.toml --out results/ [--threads K] [--check]

Every run is fully described by its config file (plus the --seed override);
identical inputs produce byte-identical outputs.  With ``--check``, the
thresholds in the config's [check] section become hard pass/fail gates: the
exit code is 0 only if all requested outputs were written and every check
held.  Failures and errors are reported as JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import PsdeError
from .estimators import estimate_pipeline
from .inference import empirical_fisher, fisher_quadrature
from .mcstudy import run_study, write_study
from .simulate import read_path, simulate_path, write_path

__all__ = ["main"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _fail_json(kind: str, message: str, **extra) -> None:
    payload = {"error": {"type": kind, "message": message, **extra}}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _apply_seed_override(cfg: ExperimentConfig, seed: int | None) -> None:
    if seed is None:
        return
    cfg.data["simulate"]["seed"] = seed
    cfg.data["study"]["base_seed"] = seed


def _run_checks(cfg: ExperimentConfig, metrics: dict) -> list:
    failures = []
    for metric, op, threshold in cfg.checks():
        if metric not in metrics:
            failures.append({"metric": metric, "reason": "metric not produced by this run"})
            continue
        value = float(metrics[metric])
        ok = value >= threshold if op == "min" else value <= threshold
        if not ok:
            failures.append({"metric": metric, "op": op, "threshold": threshold, "value": value})
    return failures


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, out: FsPath, args) -> int:
    signal = cfg.build_signal()
    diffusion = cfg.build_diffusion()
    sim = cfg.data["simulate"]
    path = simulate_path(
        signal, diffusion, cfg.theta(), sim["n_periods"], sim["steps_per_period"],
        seed=sim["seed"], stream=sim["stream"],
    )
    fmt = sim["format"]
    fname = out / ("path.csv" if fmt == "csv" else "path.bin")
    write_path(path, fname, fmt=fmt)
    print(f"wrote {fname}")
    return 0


def cmd_fisher(cfg: ExperimentConfig, out: FsPath, args) -> int:
    signal = cfg.build_signal()
    diffusion = cfg.build_diffusion()
    theta = cfg.theta()
    n_quad = cfg.data["fisher"]["n_quad"]
    quad = fisher_quadrature(signal, diffusion, theta, n_quad=n_quad)
    result = {
        "theta": [float(x) for x in theta],
        "n_quad": n_quad,
        "quadrature": quad.matrix.tolist(),
        "empirical": None,
    }
    metrics = {
        f"fisher_{j}{k}": float(quad.matrix[j, k])
        for j in range(signal.dim) for k in range(signal.dim)
    }
    if cfg.data["fisher"]["empirical"]:
        sim = cfg.data["simulate"]
        path = simulate_path(
            signal, diffusion, theta, sim["n_periods"], sim["steps_per_period"],
            seed=sim["seed"], stream=sim["stream"],
        )
        emp = empirical_fisher(path, signal, diffusion, theta)
        result["empirical"] = emp.matrix.tolist()
        for j in range(signal.dim):
            for k in range(signal.dim):
                metrics[f"fisher_empirical_{j}{k}"] = float(emp.matrix[j, k])
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    (out / "fisher.json").write_text(text, encoding="utf-8")
    print(text, end="")
    if args.check:
        failures = _run_checks(cfg, metrics)
        if failures:
            _fail_json("check_failed", "fisher checks failed", failures=failures)
            return 1
    return 0


def cmd_estimate(cfg: ExperimentConfig, out: FsPath, args) -> int:
    signal = cfg.build_signal()
    diffusion = cfg.build_diffusion()
    e = cfg.data["estimate"]
    path_file = args.path_file or e.get("path") or ""
    if path_file:
        path = read_path(path_file)
    else:
        sim = cfg.data["simulate"]
        path = simulate_path(
            signal, diffusion, cfg.theta(), sim["n_periods"], sim["steps_per_period"],
            seed=sim["seed"], stream=sim["stream"],
        )
    anchor = np.asarray(e["anchor"], dtype=np.float64) if e["anchor"] else None
    mle_ref = np.asarray(e["mle_reference"], dtype=np.float64) if e["mle_reference"] else None
    rec = estimate_pipeline(
        path, signal, diffusion,
        search=cfg.build_search(signal),
        anchor=anchor,
        fisher_mode=e["fisher_mode"],
        n_quad=e["n_quad"],
        run_grid_mle=e["grid_mle"],
        mle_reference=mle_ref,
    )
    d = signal.dim
    cols = ["seed", "stream", "n"]
    vals = [str(path.seed), str(path.stream), str(path.n_periods)]
    for name, vec in (("mde", rec.mde), ("disc", rec.discretized), ("onestep", rec.one_step)):
        cols += [f"{name}_{j}" for j in range(d)]
        vals += [_fmt(v) for v in vec]
    cols += ["onestep_in_domain", "mde_objective", "mde_iterations", "mde_boundary_hit"]
    vals += [
        _fmt(rec.one_step_in_domain),
        _fmt(rec.diagnostics.objective),
        _fmt(rec.diagnostics.iterations),
        _fmt(rec.diagnostics.boundary_hit),
    ]
    if rec.grid_mle is not None:
        cols += [f"mle_{j}" for j in range(d)]
        vals += [_fmt(v) for v in rec.grid_mle]
    text = ",".join(cols) + "\n" + ",".join(vals) + "\n"
    (out / "estimate.csv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_study(cfg: ExperimentConfig, out: FsPath, args) -> int:
    study_cfg = cfg.build_study()
    result = run_study(study_cfg, threads=args.threads)
    write_study(result, out, extra_config=cfg.data)
    print(f"wrote {out / 'replicates.csv'}, {out / 'summary.csv'}, {out / 'manifest.json'}")
    if cfg.data["study"]["halve_step"]:
        # same study at half the step size, for discretization sensitivity
        from dataclasses import replace

        fine_cfg = replace(study_cfg, steps_per_period=2 * study_cfg.steps_per_period)
        fine = run_study(fine_cfg, threads=args.threads)
        write_study(fine, out / "halfstep", extra_config=cfg.data)
        print(f"wrote {out / 'halfstep'} (steps_per_period doubled)")
    if args.check:
        failures = _run_checks(cfg, result.summary)
        if failures:
            _fail_json("check_failed", "study checks failed", failures=failures)
            return 1
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psde",
        description="Simulate and estimate diffusions driven by a periodic signal.",
    )
    parser.add_argument("--version", action="version", version=f"psde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("fisher", cmd_fisher),
        ("estimate", cmd_estimate),
        ("study", cmd_study),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file (TOML)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seeds")
        p.add_argument(
            "--threads", type=int, default=os.cpu_count() or 1,
            help="parallel batch workers for study replicates",
        )
        p.add_argument(
            "--check", action="store_true",
            help="treat [check] thresholds as hard pass/fail",
        )
        if name == "estimate":
            p.add_argument("path_file", nargs="?", default=None, help="input path file (CSV or binary)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        _apply_seed_override(cfg, args.seed)
        out = FsPath(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return args.fn(cfg, out, args)
    except PsdeError as exc:
        _fail_json(type(exc).__name__, str(exc))
        return 2
    except OSError as exc:
        _fail_json("OSError", str(exc))
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
