"""Minimum distance estimation, dyadic discretization, and one-step correction.

The preliminary estimator compares the empirical integrated-signal curve

    PsiHat_n(s) = (1/n) sum_k [ X_{(k-1)T+s} - X_{(k-1)T}
                                - int_{(k-1)T}^{(k-1)T+s} b(X_r) dr ]

against the model curve Psi_zeta(s) = int_0^s S(zeta, v) dv and minimizes the
L2([0, T]) distance over the parameter rectangle (coarse grid, then a
deterministic Nelder-Mead refinement).  Both curves use left-endpoint sums on
the simulation grid, so on a noise-free path the objective vanishes exactly
at the true parameter.

The minimizer is snapped onto a dyadic grid of side 2^-level and corrected by
one Newton/scoring step

    theta* = theta_disc + n^{-1/2} I(theta_disc)^{-1} score(theta_disc),

which upgrades the sqrt(n)-consistent preliminary estimate to an efficient
one.  ``mde_asymptotic_covariance`` evaluates the sandwich covariance
Lambda^{-1} Xi Lambda^{-1} of the rescaled MDE errors for comparison against
Monte Carlo, and ``grid_mle`` provides an optional likelihood-maximizing
baseline with the same optimizer contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateObjective,
    InvalidFamilyConfig,
    LinearlyDependentDerivatives,
    NoInteriorCube,
    ParameterOutOfDomain,
)
from .inference import FisherMatrix, LambdaWeight, empirical_fisher, fisher_quadrature, log_likelihood_ratio, score
from .model import DiffusionSpec, ParameterDomain, SignalModel, _check_parameter
from .simulate import Path, check_grid, noise_increments, signal_table

__all__ = [
    "EmpiricalPsi",
    "SearchConfig",
    "OptimizerDiagnostics",
    "EstimateRecord",
    "psi_hat",
    "psi_theoretical",
    "mde_estimate",
    "dyadic_discretize",
    "default_dyadic_level",
    "one_step",
    "OneStepResult",
    "mde_asymptotic_covariance",
    "grid_mle",
    "estimate_pipeline",
    "nelder_mead",
]


# ---------------------------------------------------------------------------
# Empirical and theoretical signal curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalPsi:
    """Segment-averaged integrated-signal curve on the [0, T] grid."""

    samples: np.ndarray = field(repr=False)
    n: int
    dt: float

    def grid(self) -> np.ndarray:
        return self.dt * np.arange(len(self.samples))


def psi_hat(path: Path, diffusion: DiffusionSpec) -> EmpiricalPsi:
    """Average over segments of (state increment minus the b-drift integral).

    The b-integral is the left-endpoint sum on the simulation grid; the value
    at offset 0 is exactly 0.
    """
    M, n, h = path.steps_per_period, path.n_periods, path.dt
    v = path.values
    idx = np.arange(n)[:, None] * M + np.arange(M + 1)[None, :]
    seg = v[idx]  # (n, M+1)
    bvals = np.broadcast_to(np.asarray(diffusion.b(v[:-1]), dtype=np.float64), (n * M,))
    bcum = np.concatenate(
        [np.zeros((n, 1)), np.cumsum(bvals.reshape(n, M), axis=1) * h], axis=1
    )
    y = seg - seg[:, :1] - bcum
    return EmpiricalPsi(samples=y.mean(axis=0), n=n, dt=h)


def psi_theoretical(signal: SignalModel, zeta, grid: np.ndarray) -> np.ndarray:
    """Cumulative integral of S(zeta, .) on the given time grid.

    Uses left-endpoint sums, the same rule as the b-integral inside
    :func:`psi_hat`, so the two curves agree exactly on noise-free paths.
    """
    zeta = _check_parameter(signal.domain, zeta)
    grid = np.asarray(grid, dtype=np.float64)
    vals = np.asarray(signal.value(zeta, grid[:-1]), dtype=np.float64)
    if vals.shape != grid[:-1].shape:
        vals = np.array([signal.value(zeta, float(t)) for t in grid[:-1]])
    return np.concatenate([[0.0], np.cumsum(vals * np.diff(grid))])


# ---------------------------------------------------------------------------
# Deterministic Nelder-Mead
# ---------------------------------------------------------------------------

def nelder_mead(f, x0: np.ndarray, scale: float, xtol: float = 1e-8, max_iter: int = 500):
    """Minimize ``f`` from ``x0`` with a fixed-shape initial simplex.

    Standard reflection/expansion/contraction/shrink coefficients; terminates
    when the simplex infinity-norm diameter drops below ``xtol`` or after
    ``max_iter`` iterations.  Fully deterministic (stable sorts, no RNG).

    Returns (x_best, f_best, iterations, n_evaluations).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    d = len(x0)
    sim = np.vstack([x0] + [x0 + scale * np.eye(d)[j] for j in range(d)])
    fs = np.array([f(x) for x in sim])
    n_eval = d + 1
    alpha, gamma, rho, sigma_c = 1.0, 2.0, 0.5, 0.5

    it = 0
    for it in range(1, max_iter + 1):
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if np.max(np.abs(sim[1:] - sim[0])) <= xtol:
            break
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + alpha * (centroid - sim[-1])
        fr = f(xr)
        n_eval += 1
        if fs[0] <= fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[0]:
            xe = centroid + gamma * (centroid - sim[-1])
            fe = f(xe)
            n_eval += 1
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        xc = centroid + rho * (sim[-1] - centroid)
        fc = f(xc)
        n_eval += 1
        if fc < fs[-1]:
            sim[-1], fs[-1] = xc, fc
            continue
        sim[1:] = sim[0] + sigma_c * (sim[1:] - sim[0])
        fs[1:] = [f(x) for x in sim[1:]]
        n_eval += d

    best = int(np.argmin(fs))
    return sim[best].copy(), float(fs[best]), it, n_eval


# ---------------------------------------------------------------------------
# Minimum distance estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    """Optimizer settings shared by the MDE and the grid MLE.

    ``bounds=None`` searches the signal's full parameter rectangle; narrower
    bounds are useful when the domain carries a large proxy upper bound (the
    amplitude coordinate of the phase/amplitude family).
    """

    bounds: tuple[tuple[float, float], ...] | None = None
    grid_points: int = 32
    dyadic_level: int | None = None
    xtol: float = 1e-8
    max_iter: int = 500


@dataclass(frozen=True)
class OptimizerDiagnostics:
    objective: float
    iterations: int
    n_evaluations: int
    boundary_hit: bool


def default_dyadic_level(n_periods: int) -> int:
    """Dyadic grid level: side 2^-level with level = max(ceil(log2 sqrt(n)), 6)."""
    return max(math.ceil(0.5 * math.log2(max(n_periods, 1))), 6)


def _search_domain(signal: SignalModel, search: SearchConfig) -> ParameterDomain:
    if search.bounds is None:
        return signal.domain
    if len(search.bounds) != signal.dim:
        raise InvalidFamilyConfig("search bounds dimension does not match the signal")
    inter = []
    for (lo, hi), (dlo, dhi) in zip(search.bounds, signal.domain.bounds):
        lo2, hi2 = max(lo, dlo), min(hi, dhi)
        if not lo2 < hi2:
            raise InvalidFamilyConfig("search bounds do not intersect the parameter domain")
        inter.append((lo2, hi2))
    return ParameterDomain(inter)


def _two_phase_minimize(objective, signal: SignalModel, search: SearchConfig, n_periods: int):
    """Coarse grid scan over the search rectangle, then Nelder-Mead refinement."""
    dom = _search_domain(signal, search)
    g = search.grid_points
    axes = [lo + (np.arange(g) + 0.5) * (hi - lo) / g for lo, hi in dom.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.array([objective(p) for p in points])
    if np.max(vals) - np.min(vals) <= 1e-12 * (1.0 + abs(float(np.max(vals)))):
        raise DegenerateObjective("objective is constant over the coarse grid")
    best = int(np.argmin(vals))  # first minimum = lowest lexicographic index
    x_grid, f_grid = points[best], float(vals[best])

    def gated(x):
        if not all(lo < xi < hi for xi, (lo, hi) in zip(x, dom.bounds)):
            return np.inf
        return objective(x)

    level = search.dyadic_level if search.dyadic_level is not None else default_dyadic_level(n_periods)
    x_ref, f_ref, iters, n_eval = nelder_mead(
        gated, x_grid, scale=2.0 ** (-level), xtol=search.xtol, max_iter=search.max_iter
    )
    if f_ref > f_grid:
        x_ref, f_ref = x_grid, f_grid
    x_out = dom.clip_inside(x_ref, margin=1e-12)
    f_out = gated(x_out)
    if f_out > f_grid:
        x_out, f_out = x_grid, f_grid
    widths = np.array([hi - lo for lo, hi in dom.bounds])
    lows = np.array([lo for lo, _ in dom.bounds])
    highs = np.array([hi for _, hi in dom.bounds])
    boundary = bool(np.any((x_out - lows < 1e-6 * widths) | (highs - x_out < 1e-6 * widths)))
    return x_out, OptimizerDiagnostics(float(f_out), iters, n_eval + len(points), boundary)


def mde_estimate(
    path: Path,
    signal: SignalModel,
    diffusion: DiffusionSpec,
    search: SearchConfig | None = None,
):
    """Minimize the squared L2 distance between PsiHat and Psi_zeta over zeta.

    Returns (theta_hat, OptimizerDiagnostics).  Raises ``DegenerateObjective``
    when the objective is flat over the coarse grid (non-identifiable setup).
    """
    search = search or SearchConfig()
    check_grid(path, signal.period)
    emp = psi_hat(path, diffusion)
    M, h = path.steps_per_period, path.dt
    w_trap = np.full(M + 1, h)
    w_trap[0] = w_trap[-1] = h / 2.0

    def objective(zeta):
        tab = signal_table(signal, zeta, M, h)
        psi_z = np.concatenate([[0.0], np.cumsum(tab) * h])
        diff = emp.samples - psi_z
        return float(w_trap @ (diff * diff))

    return _two_phase_minimize(objective, signal, search, path.n_periods)


# ---------------------------------------------------------------------------
# Dyadic discretization and one-step correction
# ---------------------------------------------------------------------------

def dyadic_discretize(zeta, level: int, anchor=None, domain: ParameterDomain | None = None):
    """Snap a point to the corner of its dyadic cube of side 2^-level.

    Returns the lower-left corner of the cube containing ``zeta`` when that
    cube lies inside the open domain; otherwise the nearest corner (per
    coordinate) whose cube does.  ``anchor`` is accepted for API parity with
    the construction the correction step comes from but does not affect the
    result.  Raises ``NoInteriorCube`` when no cube of this side fits.
    """
    if domain is None:
        raise InvalidFamilyConfig("dyadic_discretize needs the parameter domain")
    zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
    if not domain.contains(zeta):
        raise ParameterOutOfDomain(f"cannot discretize {zeta.tolist()} outside the domain")
    g = 2.0 ** (-int(level))
    out = np.empty_like(zeta)
    for j, (lo, hi) in enumerate(domain.bounds):
        a_min = int(np.floor(lo / g)) + 1
        while a_min * g <= lo:
            a_min += 1
        a_max = int(np.floor(hi / g))
        while (a_max + 1) * g > hi:
            a_max -= 1
        if a_min > a_max:
            raise NoInteriorCube(
                f"no dyadic cube of side 2^-{level} fits inside ({lo}, {hi})"
            )
        a = int(np.floor(zeta[j] / g))
        a = min(max(a, a_min), a_max)
        out[j] = a * g
    return out


@dataclass(frozen=True)
class OneStepResult:
    theta: np.ndarray
    in_domain: bool
    fisher: FisherMatrix


def one_step(
    path: Path,
    signal: SignalModel,
    diffusion: DiffusionSpec,
    zeta,
    fisher_mode: str = "quadrature",
    weight: LambdaWeight | None = None,
    n_quad: int = 2048,
) -> OneStepResult:
    """One scoring step from a discretized preliminary estimate.

    theta* = zeta + n^{-1/2} I(zeta)^{-1} score(zeta).  The result is returned
    raw: when the step leaves the parameter rectangle, ``in_domain`` is False
    and the value is NOT clipped (clipping would distort the error law that
    the Monte Carlo diagnostics measure).
    """
    zeta = _check_parameter(signal.domain, zeta)
    if fisher_mode == "quadrature":
        if weight is None and diffusion.sigma_constant() is None:
            weight = LambdaWeight.empirical(path, diffusion)
        fm = fisher_quadrature(signal, diffusion, zeta, weight=weight, n_quad=n_quad)
    elif fisher_mode == "empirical":
        fm = empirical_fisher(path, signal, diffusion, zeta)
    else:
        raise InvalidFamilyConfig(f"unknown fisher_mode {fisher_mode!r}")
    delta = score(path, signal, diffusion, zeta)
    step = fm.solve(delta) / np.sqrt(path.n_periods)
    theta_star = zeta + step
    return OneStepResult(theta=theta_star, in_domain=signal.domain.contains(theta_star), fisher=fm)


# ---------------------------------------------------------------------------
# MDE limit covariance
# ---------------------------------------------------------------------------

def _gradient_at_mids(signal: SignalModel, theta, mids: np.ndarray) -> np.ndarray:
    g = np.asarray(signal.gradient(theta, mids), dtype=np.float64)
    if g.shape != (signal.dim, len(mids)):
        g = np.stack(
            [np.asarray(signal.gradient(theta, float(t)), dtype=np.float64) for t in mids], axis=1
        )
    return g


def mde_asymptotic_covariance(
    signal: SignalModel,
    diffusion: DiffusionSpec,
    theta,
    phi_mode: str = "constant_sigma",
    path: Path | None = None,
    n_grid: int = 2048,
) -> np.ndarray:
    """Sandwich covariance Lambda^{-1} Xi Lambda^{-1} of sqrt(n)(MDE - theta).

    Lambda has entries int DPsi_i DPsi_j ds and Xi entries
    int int DPsi_i(s1) Phi(s1 ^ s2) DPsi_j(s2) ds1 ds2, with
    DPsi_j(s) = int_0^s dS/dtheta_j(theta, v) dv and Phi the integrated noise
    variance profile: sigma^2 * s for constant sigma (``constant_sigma``
    mode), or the segment-averaged estimate from a calibration path
    (``empirical`` mode).  Passing the path under analysis as its own
    calibration path is a plug-in choice and a (small) bias source.
    """
    theta = _check_parameter(signal.domain, theta)
    T = signal.period
    edges = np.linspace(0.0, T, n_grid + 1)
    if signal.kinks is not None:
        edges = np.unique(np.concatenate([edges, np.atleast_1d(signal.kinks(theta))]))
    dl = np.diff(edges)
    mids = edges[:-1] + dl / 2.0
    gmid = _gradient_at_mids(signal, theta, mids)
    dpsi = np.concatenate(
        [np.zeros((signal.dim, 1)), np.cumsum(gmid * dl, axis=1)], axis=1
    )  # (d, m+1) on the edge nodes

    w = np.zeros(len(edges))
    w[:-1] += dl / 2.0
    w[1:] += dl / 2.0

    lam = (dpsi * w) @ dpsi.T
    lam = 0.5 * (lam + lam.T)
    cond = np.linalg.cond(lam)
    if not np.isfinite(cond) or cond > 1e12:
        raise LinearlyDependentDerivatives(
            f"integrated gradients are linearly dependent (condition {cond:g})"
        )

    if phi_mode == "constant_sigma":
        sig = diffusion.sigma_constant()
        if sig is None:
            raise InvalidFamilyConfig("constant_sigma mode needs a constant diffusion coefficient")
        phi = sig**2 * edges
    elif phi_mode == "empirical":
        if path is None:
            raise InvalidFamilyConfig("empirical mode needs a calibration path")
        check_grid(path, T)
        M, n = path.steps_per_period, path.n_periods
        v = path.values
        sig2 = np.broadcast_to(np.asarray(diffusion.sigma(v[:-1]), dtype=np.float64), (n * M,)) ** 2
        per = sig2.reshape(n, M).mean(axis=0)
        phi_grid = np.concatenate([[0.0], np.cumsum(per) * path.dt])
        phi = np.interp(edges, path.dt * np.arange(M + 1), phi_grid)
    else:
        raise InvalidFamilyConfig(f"unknown phi_mode {phi_mode!r}")

    phimat = np.minimum.outer(phi, phi)  # Phi(s1 ^ s2); Phi is nondecreasing
    u = dpsi * w  # (d, m+1)
    xi = u @ phimat @ u.T
    xi = 0.5 * (xi + xi.T)
    lam_inv_xi = np.linalg.solve(lam, xi)
    return np.linalg.solve(lam, lam_inv_xi.T).T


# ---------------------------------------------------------------------------
# Grid MLE baseline
# ---------------------------------------------------------------------------

def grid_mle(
    path: Path,
    signal: SignalModel,
    diffusion: DiffusionSpec,
    reference=None,
    search: SearchConfig | None = None,
):
    """Maximize the log likelihood ratio against a fixed reference point.

    The maximizer does not depend on the reference (likelihood-ratio chain
    rule); the reference defaults to the domain midpoint.  Same two-phase
    optimizer contract as :func:`mde_estimate`.
    """
    search = search or SearchConfig()
    if reference is None:
        reference = signal.domain.midpoint()
    reference = _check_parameter(signal.domain, reference)
    db_ref = noise_increments(path, signal, diffusion, reference)

    def objective(zeta):
        return -log_likelihood_ratio(path, signal, diffusion, zeta, reference, _db=db_ref)

    theta_hat, diag = _two_phase_minimize(objective, signal, search, path.n_periods)
    return theta_hat, diag


# ---------------------------------------------------------------------------
# Full pipeline record
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateRecord:
    """Outputs of the MDE -> discretize -> one-step pipeline for one path."""

    mde: np.ndarray
    discretized: np.ndarray
    one_step: np.ndarray
    one_step_in_domain: bool
    fisher_at_discretized: FisherMatrix
    diagnostics: OptimizerDiagnostics
    grid_mle: np.ndarray | None = None


def estimate_pipeline(
    path: Path,
    signal: SignalModel,
    diffusion: DiffusionSpec,
    search: SearchConfig | None = None,
    anchor=None,
    fisher_mode: str = "quadrature",
    n_quad: int = 2048,
    run_grid_mle: bool = False,
    mle_reference=None,
) -> EstimateRecord:
    """Run MDE, dyadic discretization, and the one-step correction on a path."""
    search = search or SearchConfig()
    theta_mde, diag = mde_estimate(path, signal, diffusion, search)
    level = search.dyadic_level if search.dyadic_level is not None else default_dyadic_level(path.n_periods)
    if anchor is None:
        anchor = signal.domain.midpoint()
    disc = dyadic_discretize(theta_mde, level, anchor=anchor, domain=signal.domain)
    osr = one_step(path, signal, diffusion, disc, fisher_mode=fisher_mode, n_quad=n_quad)
    mle = None
    if run_grid_mle:
        mle, _ = grid_mle(path, signal, diffusion, reference=mle_reference, search=search)
    return EstimateRecord(
        mde=theta_mde,
        discretized=disc,
        one_step=osr.theta,
        one_step_in_domain=osr.in_domain,
        fisher_at_discretized=osr.fisher,
        diagnostics=diag,
        grid_mle=mle,
    )
