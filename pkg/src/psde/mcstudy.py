"""Replicated simulate-then-estimate studies with verification diagnostics.

``run_study`` simulates ``n_replicates`` independent trajectories at the true
parameter (Philox streams keyed by (base_seed, replicate), so results do not
depend on execution order), and for each replicate computes the score, the
path-averaged information, log likelihood ratios at the local alternatives
``theta + h / sqrt(n)``, and the MDE / discretized / one-step estimates.

The aggregate diagnostics check the asymptotic statements at finite n:

* ``lan_diagnostic`` -- the remainder of the quadratic log-likelihood
  expansion ``logLR = h' score - h' I h / 2 + remainder`` per replicate, plus
  the slope of regressing logLR on its predicted quadratic part (slope 1 and
  small remainders indicate the expansion holds at this n).
* ``normality_diagnostic`` -- per-coordinate z-scores and KS statistics and
  the covariance Frobenius error of a sample against a target normal law
  (used for the score against I and for the rescaled one-step errors against
  I^{-1}).

Everything is deterministic given the config; the CSV/JSON writers emit
17-significant-digit floats so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .errors import DimensionMismatch, InvalidFamilyConfig, NonFiniteState, ParameterOutOfDomain
from .estimators import (
    EstimateRecord,
    SearchConfig,
    estimate_pipeline,
    mde_asymptotic_covariance,
)
from .inference import FisherMatrix, LambdaWeight, empirical_fisher, fisher_quadrature, log_likelihood_ratio, score
from .model import DiffusionSpec, SignalModel
from .simulate import _simulate_batch, noise_increments

__all__ = [
    "StudyConfig",
    "ReplicateRecord",
    "StudyResult",
    "run_study",
    "lan_diagnostic",
    "normality_diagnostic",
    "write_study",
]


# ---------------------------------------------------------------------------
# Config and result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Everything needed to reproduce one Monte Carlo study."""

    signal: SignalModel
    diffusion: DiffusionSpec
    theta_true: np.ndarray
    n_periods: int
    steps_per_period: int
    n_replicates: int
    base_seed: int
    h_directions: tuple = ((1.0,),)
    run_estimators: bool = True
    run_grid_mle: bool = False
    search: SearchConfig | None = None
    anchor: np.ndarray | None = None
    fisher_mode: str = "quadrature"
    n_quad: int = 2048
    batch_size: int = 64
    max_failure_fraction: float = 0.01

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_true, dtype=np.float64))
        object.__setattr__(self, "theta_true", theta)
        if not self.signal.domain.contains(theta):
            raise ParameterOutOfDomain(f"theta_true {theta.tolist()} outside the domain")
        hs = tuple(np.atleast_1d(np.asarray(h, dtype=np.float64)) for h in self.h_directions)
        object.__setattr__(self, "h_directions", hs)
        root = math.sqrt(self.n_periods)
        for h in hs:
            if h.shape != theta.shape:
                raise DimensionMismatch("local direction h has wrong dimension")
            if not self.signal.domain.contains(theta + h / root):
                raise ParameterOutOfDomain(
                    f"local alternative theta + {h.tolist()}/sqrt(n) leaves the domain"
                )
        if self.n_replicates < 1:
            raise InvalidFamilyConfig("need at least one replicate")
        if self.signal.period != self.diffusion.period:
            raise InvalidFamilyConfig("signal and diffusion periods differ")

    def describe(self) -> dict:
        """Plain-data echo of the study setup (for the output manifest)."""
        sig_const = self.diffusion.sigma_constant()
        return {
            "family": self.signal.name,
            "family_meta": {k: v for k, v in self.signal.meta.items() if not callable(v) and k != "base_integrals"},
            "period": self.signal.period,
            "theta_true": [float(x) for x in self.theta_true],
            "n_periods": self.n_periods,
            "steps_per_period": self.steps_per_period,
            "n_replicates": self.n_replicates,
            "base_seed": self.base_seed,
            "h_directions": [[float(x) for x in h] for h in self.h_directions],
            "sigma": sig_const if sig_const is not None else "state-dependent",
            "x0": self.diffusion.x0,
            "run_estimators": self.run_estimators,
            "run_grid_mle": self.run_grid_mle,
            "fisher_mode": self.fisher_mode,
            "n_quad": self.n_quad,
        }


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    stream: int
    failed: bool
    score: np.ndarray | None = None
    llr: np.ndarray | None = None
    empirical_fisher: np.ndarray | None = None
    estimate: EstimateRecord | None = None


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    records: list
    failures: list
    fisher: FisherMatrix
    summary: dict = field(default_factory=dict)

    def ok_records(self) -> list:
        return [r for r in self.records if not r.failed]

    def score_matrix(self) -> np.ndarray:
        rows = [r.score for r in self.ok_records()]
        if not rows:
            return np.empty((0, self.config.signal.dim))
        return np.array(rows)

    def llr_matrix(self) -> np.ndarray:
        rows = [r.llr for r in self.ok_records()]
        if not rows:
            return np.empty((0, len(self.config.h_directions)))
        return np.array(rows)

    def estimator_errors(self, which: str) -> np.ndarray:
        """sqrt(n) * (estimate - theta_true) rows for 'mde', 'one_step' or 'grid_mle'."""
        root = math.sqrt(self.config.n_periods)
        rows = []
        for r in self.ok_records():
            if r.estimate is None:
                continue
            est = getattr(r.estimate, which)
            if est is None:
                continue
            rows.append(root * (est - self.config.theta_true))
        return np.array(rows)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def _norm_cdf(x: np.ndarray) -> np.ndarray:
    return np.array([0.5 * (1.0 + math.erf(v / math.sqrt(2.0))) for v in x])


def _ks_statistic(samples: np.ndarray, variance: float) -> float:
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(xs)
    cdf = _norm_cdf(xs / math.sqrt(variance))
    lower = np.max(cdf - np.arange(n) / n)
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    return float(max(lower, upper))


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """One-sample KS rejection threshold (Stephens' small-sample correction)."""
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c / (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n))


def normality_diagnostic(samples: np.ndarray, target_cov: np.ndarray) -> dict:
    """Compare a d-dimensional sample against the centred normal N(0, target).

    Reports per-coordinate mean z-scores, the relative Frobenius error of the
    sample covariance, and per-coordinate KS statistics against the target
    marginals with the 1% rejection threshold.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target_cov, dtype=np.float64))
    n, d = samples.shape
    if target.shape != (d, d):
        raise DimensionMismatch(f"target covariance {target.shape} does not match samples of dim {d}")
    if n < 100:
        raise InvalidFamilyConfig("normality diagnostic needs at least 100 samples")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False).reshape(d, d)
    mean_z = mean / np.sqrt(np.diag(target) / n)
    cov_rel_err = float(np.linalg.norm(cov - target) / np.linalg.norm(target))
    ks = [_ks_statistic(samples[:, j], target[j, j]) for j in range(d)]
    return {
        "n": n,
        "mean_z": mean_z,
        "cov": cov,
        "cov_rel_err": cov_rel_err,
        "ks": np.array(ks),
        "ks_critical_1pct": ks_critical_value(n, 0.01),
    }


def lan_diagnostic(result: StudyResult, fisher: FisherMatrix) -> dict:
    """Remainder statistics of the quadratic log-likelihood expansion.

    For each configured direction h, computes per replicate
    ``R = logLR - (h' score - h' I h / 2)`` and reports its mean, mean
    absolute value, standard deviation and quantiles, together with the
    slope/intercept of the regression of logLR on the predicted quadratic
    part.  A zero direction gives an identically zero remainder.
    """
    scores = result.score_matrix()
    llrs = result.llr_matrix()
    out = {}
    for j, h in enumerate(result.config.h_directions):
        quad = scores @ h - 0.5 * float(h @ fisher.matrix @ h)
        r = llrs[:, j] - quad
        var_q = float(np.var(quad))
        if var_q > 0:
            slope = float(np.cov(quad, llrs[:, j])[0, 1] / var_q)
            intercept = float(np.mean(llrs[:, j]) - slope * np.mean(quad))
        else:
            slope, intercept = float("nan"), float("nan")
        out[j] = {
            "h": h,
            "mean_remainder": float(np.mean(r)),
            "mean_abs_remainder": float(np.mean(np.abs(r))),
            "std_remainder": float(np.std(r)),
            "quantiles": {q: float(np.quantile(r, q)) for q in (0.05, 0.25, 0.5, 0.75, 0.95)},
            "slope": slope,
            "intercept": intercept,
        }
    return out


# ---------------------------------------------------------------------------
# Study driver
# ---------------------------------------------------------------------------

def _replicate_record(config: StudyConfig, path, rep: int, stream: int) -> ReplicateRecord:
    sig, dif, theta = config.signal, config.diffusion, config.theta_true
    db = noise_increments(path, sig, dif, theta)
    sc = score(path, sig, dif, theta, _db=db)
    ef = empirical_fisher(path, sig, dif, theta).matrix
    root = math.sqrt(config.n_periods)
    llr = np.array(
        [
            log_likelihood_ratio(path, sig, dif, theta + h / root, theta, _db=db)
            for h in config.h_directions
        ]
    )
    est = None
    if config.run_estimators:
        est = estimate_pipeline(
            path,
            sig,
            dif,
            search=config.search,
            anchor=config.anchor,
            fisher_mode=config.fisher_mode,
            n_quad=config.n_quad,
            run_grid_mle=config.run_grid_mle,
        )
    return ReplicateRecord(
        replicate=rep, stream=stream, failed=False, score=sc, llr=llr,
        empirical_fisher=ef, estimate=est,
    )


def _process_batch(config: StudyConfig, streams: list) -> list:
    paths, ok = _simulate_batch(
        config.signal,
        config.diffusion,
        config.theta_true,
        config.n_periods,
        config.steps_per_period,
        config.base_seed,
        streams,
    )
    records = []
    for path, good, stream in zip(paths, ok, streams):
        if not good:
            records.append(ReplicateRecord(replicate=stream, stream=stream, failed=True))
        else:
            records.append(_replicate_record(config, path, stream, stream))
    return records


def run_study(config: StudyConfig, threads: int = 1) -> StudyResult:
    """Run the replicated simulate -> diagnose -> estimate pipeline.

    Replicate r uses the RNG stream (base_seed, r); permuting execution order
    or changing the batch/thread split cannot change any record.  Failed
    replicates (non-finite state) are recorded and the study aborts if more
    than ``max_failure_fraction`` of them fail, since silently dropping
    replicates would bias the Monte Carlo tallies.
    """
    batches = [
        list(range(lo, min(lo + config.batch_size, config.n_replicates)))
        for lo in range(0, config.n_replicates, config.batch_size)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda s: _process_batch(config, s), batches))
    else:
        chunks = [_process_batch(config, s) for s in batches]
    records = [r for chunk in chunks for r in chunk]
    failures = [r.stream for r in records if r.failed]
    if len(failures) > config.max_failure_fraction * config.n_replicates:
        raise NonFiniteState(
            f"{len(failures)}/{config.n_replicates} replicates left the finite range; "
            "aborting (tallies would be biased)"
        )

    weight = None
    if config.diffusion.sigma_constant() is None:
        first_ok = next(r for r in records if not r.failed)
        cal_paths, _ = _simulate_batch(
            config.signal, config.diffusion, config.theta_true,
            config.n_periods, config.steps_per_period, config.base_seed, [first_ok.stream],
        )
        weight = LambdaWeight.empirical(cal_paths[0], config.diffusion)
    fisher = fisher_quadrature(
        config.signal, config.diffusion, config.theta_true, weight=weight, n_quad=config.n_quad
    )

    result = StudyResult(config=config, records=records, failures=failures, fisher=fisher)
    result.summary.update(_build_summary(result))
    return result


def _build_summary(result: StudyResult) -> dict:
    config = result.config
    d = config.signal.dim
    out: dict[str, float] = {
        "n_periods": float(config.n_periods),
        "n_replicates": float(config.n_replicates),
        "n_failures": float(len(result.failures)),
    }
    for j in range(d):
        for k in range(j, d):
            out[f"fisher_quadrature_{j}{k}"] = float(result.fisher.matrix[j, k])

    scores = result.score_matrix()
    if len(scores) >= 2:
        scov = np.cov(scores, rowvar=False).reshape(d, d)
        for j in range(d):
            for k in range(j, d):
                out[f"score_cov_{j}{k}"] = float(scov[j, k])
        out["score_cov_rel_err"] = float(
            np.linalg.norm(scov - result.fisher.matrix) / np.linalg.norm(result.fisher.matrix)
        )
    if len(scores) >= 100:
        norm = normality_diagnostic(scores, result.fisher.matrix)
        for j in range(d):
            out[f"score_mean_z_{j}"] = float(norm["mean_z"][j])
            out[f"score_ks_{j}"] = float(norm["ks"][j])
        out["ks_critical_1pct"] = norm["ks_critical_1pct"]

    lan = lan_diagnostic(result, result.fisher) if result.ok_records() else {}
    for j, stats in lan.items():
        out[f"lan_slope_h{j}"] = stats["slope"]
        out[f"lan_intercept_h{j}"] = stats["intercept"]
        out[f"lan_mean_abs_remainder_h{j}"] = stats["mean_abs_remainder"]
        out[f"lan_std_remainder_h{j}"] = stats["std_remainder"]

    if config.run_estimators:
        inv = result.fisher.inverse()
        one = result.estimator_errors("one_step")
        mde = result.estimator_errors("mde")
        if len(one) >= 2:
            cov_one = np.cov(one, rowvar=False).reshape(d, d)
            for j in range(d):
                for k in range(j, d):
                    out[f"onestep_cov_{j}{k}"] = float(cov_one[j, k])
                    out[f"onestep_cov_target_{j}{k}"] = float(inv[j, k])
            out["onestep_cov_rel_err"] = float(np.linalg.norm(cov_one - inv) / np.linalg.norm(inv))
            out["onestep_out_of_domain"] = float(
                sum(1 for r in result.ok_records() if r.estimate and not r.estimate.one_step_in_domain)
            )
        if len(mde) >= 2:
            cov_mde = np.cov(mde, rowvar=False).reshape(d, d)
            for j in range(d):
                for k in range(j, d):
                    out[f"mde_cov_{j}{k}"] = float(cov_mde[j, k])
            out["mde_trace_cov"] = float(np.trace(cov_mde))
            out["onestep_trace_cov"] = float(np.trace(np.cov(one, rowvar=False).reshape(d, d)))
            if config.diffusion.sigma_constant() is not None:
                target = mde_asymptotic_covariance(config.signal, config.diffusion, config.theta_true)
                for j in range(d):
                    for k in range(j, d):
                        out[f"mde_cov_target_{j}{k}"] = float(target[j, k])
                out["mde_cov_rel_err"] = float(np.linalg.norm(cov_mde - target) / np.linalg.norm(target))
        mle = result.estimator_errors("grid_mle")
        if len(mle) >= 2:
            cov_mle = np.cov(mle, rowvar=False).reshape(d, d)
            for j in range(d):
                for k in range(j, d):
                    out[f"mle_cov_{j}{k}"] = float(cov_mle[j, k])
    return out


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _replicate_rows(result: StudyResult):
    config = result.config
    d = config.signal.dim
    n_h = len(config.h_directions)
    cols = ["replicate", "stream", "failed"]
    cols += [f"score_{j}" for j in range(d)]
    cols += [f"llr_h{j}" for j in range(n_h)]
    cols += [f"ef_{j}{k}" for j in range(d) for k in range(j, d)]
    if config.run_estimators:
        cols += [f"mde_{j}" for j in range(d)]
        cols += [f"disc_{j}" for j in range(d)]
        cols += [f"onestep_{j}" for j in range(d)]
        cols += ["onestep_in_domain", "mde_objective", "mde_iterations", "mde_boundary_hit"]
        if config.run_grid_mle:
            cols += [f"mle_{j}" for j in range(d)]
    yield ",".join(cols)
    for r in result.records:
        if r.failed:
            row = [str(r.replicate), str(r.stream), "1"] + ["nan"] * (len(cols) - 3)
            yield ",".join(row)
            continue
        row = [str(r.replicate), str(r.stream), "0"]
        row += [_fmt(v) for v in r.score]
        row += [_fmt(v) for v in r.llr]
        row += [_fmt(r.empirical_fisher[j, k]) for j in range(d) for k in range(j, d)]
        if config.run_estimators:
            est = r.estimate
            row += [_fmt(v) for v in est.mde]
            row += [_fmt(v) for v in est.discretized]
            row += [_fmt(v) for v in est.one_step]
            row += [
                _fmt(est.one_step_in_domain),
                _fmt(est.diagnostics.objective),
                _fmt(est.diagnostics.iterations),
                _fmt(est.diagnostics.boundary_hit),
            ]
            if config.run_grid_mle:
                row += [_fmt(v) for v in est.grid_mle]
        yield ",".join(row)


def write_study(result: StudyResult, out_dir, extra_config: dict | None = None) -> dict:
    """Write replicates.csv, summary.csv and manifest.json into ``out_dir``.

    Returns the manifest dict.  Identical results produce byte-identical
    files (floats are printed with 17 significant digits).
    """
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep_text = "\n".join(_replicate_rows(result)) + "\n"
    (out / "replicates.csv").write_text(rep_text, encoding="utf-8")
    sum_text = "metric,value\n" + "\n".join(
        f"{k},{_fmt(v)}" for k, v in result.summary.items()
    ) + "\n"
    (out / "summary.csv").write_text(sum_text, encoding="utf-8")
    manifest = {
        "package": f"psde {__version__}",
        "config": result.config.describe(),
        "outputs": {
            "replicates.csv": hashlib.sha256(rep_text.encode()).hexdigest(),
            "summary.csv": hashlib.sha256(sum_text.encode()).hexdigest(),
        },
    }
    if extra_config:
        manifest["experiment_config"] = extra_config
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
