"""Likelihood ratios, score vectors, and Fisher information.

For a path observed over [0, nT] under a hypothesized parameter ``theta`` the
discrete-time analogues of the continuous-observation objects are

    log LR(zeta / theta) = sum_i delta_i dB_i(theta) - 1/2 sum_i delta_i^2 h,
        delta_i = (S(zeta, t_i) - S(theta, t_i)) / sigma(X_i),

    score(theta) = n^{-1/2} sum_i Sdot(theta, t_i) / sigma(X_i) dB_i(theta),

    I_emp(theta) = n^{-1} sum_i Sdot Sdot^T / sigma^2(X_i) h,

with ``dB(theta)`` the reconstructed Brownian increments (left-endpoint Ito
sums throughout, matching the martingale structure of the continuous-time
objects).  The population information is the quadrature

    I(theta) = int_0^T Sdot(theta, s) Sdot(theta, s)^T w(s) ds,

where the weight ``w`` is 1/sigma^2 times Lebesgue measure for constant
sigma, and otherwise the ergodic average of 1/sigma^2(X) over the period
segments of a calibration path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidFamilyConfig, SingularInformation
from .model import DiffusionSpec, SignalModel, _check_parameter
from .simulate import Path, check_grid, gradient_table, noise_increments, signal_table

__all__ = [
    "FisherMatrix",
    "LambdaWeight",
    "log_likelihood_ratio",
    "score",
    "empirical_fisher",
    "fisher_quadrature",
]

_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class FisherMatrix:
    """A d x d information matrix with its provenance and evaluation point."""

    matrix: np.ndarray = field(repr=False)
    provenance: str
    theta: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"information matrix must be square, got {m.shape}")
        asym = np.max(np.abs(m - m.T))
        if asym > 1e-12 * (1.0 + np.max(np.abs(m))):
            raise SingularInformation(f"information matrix asymmetric by {asym:g}")
        m = 0.5 * (m + m.T)
        eigs = np.linalg.eigvalsh(m)
        if eigs[0] < -1e-10 * max(np.trace(m), 1e-300):
            raise SingularInformation(f"information matrix not PSD (min eigenvalue {eigs[0]:g})")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def _check_invertible(self):
        cond = np.linalg.cond(self.matrix)
        if not np.isfinite(cond) or cond > _MAX_CONDITION:
            raise SingularInformation(
                f"information matrix at theta={self.theta.tolist()} has condition {cond:g}"
            )

    def inverse(self) -> np.ndarray:
        self._check_invertible()
        return np.linalg.inv(self.matrix)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        self._check_invertible()
        return np.linalg.solve(self.matrix, rhs)


@dataclass(frozen=True)
class LambdaWeight:
    """The weight w(s) of the information integral on [0, T].

    ``constant_sigma`` mode is the closed form 1/sigma^2; ``empirical`` mode
    averages 1/sigma^2(X) over the period segments of a calibration path.
    """

    mode: str
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if g.shape != v.shape or g.ndim != 1:
            raise DimensionMismatch("weight grid and samples must be 1-d with equal length")
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise InvalidFamilyConfig("weight samples must be finite and positive")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant_sigma(cls, diffusion: DiffusionSpec) -> "LambdaWeight":
        sig = diffusion.sigma_constant()
        if sig is None:
            raise InvalidFamilyConfig(
                "sigma is state-dependent; build the weight empirically from a calibration path"
            )
        w = 1.0 / sig**2
        return cls(mode="constant_sigma", grid=np.array([0.0, diffusion.period]), values=np.array([w, w]))

    @classmethod
    def empirical(cls, path: Path, diffusion: DiffusionSpec) -> "LambdaWeight":
        check_grid(path, diffusion.period)
        M, n = path.steps_per_period, path.n_periods
        v = path.values
        inv2 = 1.0 / np.broadcast_to(np.asarray(diffusion.sigma(v), dtype=np.float64), v.shape) ** 2
        # segment-averaged 1/sigma^2 at each in-period offset, endpoints included
        idx = np.arange(n)[:, None] * M + np.arange(M + 1)[None, :]
        w = inv2[idx].mean(axis=0)
        return cls(mode="empirical", grid=path.dt * np.arange(M + 1), values=w)

    def at(self, s) -> np.ndarray:
        return np.interp(np.asarray(s, dtype=np.float64), self.grid, self.values)


# ---------------------------------------------------------------------------
# Path functionals
# ---------------------------------------------------------------------------

def log_likelihood_ratio(
    path: Path,
    signal: SignalModel,
    diffusion: DiffusionSpec,
    zeta,
    theta,
    _db: np.ndarray | None = None,
) -> float:
    """log of the likelihood ratio of parameter ``zeta`` against ``theta``.

    Exactly 0 when the two parameters coincide, and antisymmetric under
    swapping them (an algebraic identity of the discrete sums).
    """
    zeta = _check_parameter(signal.domain, zeta)
    theta = _check_parameter(signal.domain, theta)
    check_grid(path, signal.period)
    if np.array_equal(zeta, theta):
        return 0.0
    M, n, h = path.steps_per_period, path.n_periods, path.dt
    db = noise_increments(path, signal, diffusion, theta) if _db is None else _db
    gap = np.tile(signal_table(signal, zeta, M, h) - signal_table(signal, theta, M, h), n)
    sig = np.broadcast_to(
        np.asarray(diffusion.sigma(path.values[:-1]), dtype=np.float64), (len(gap),)
    )
    delta = gap / sig
    return float(delta @ db - 0.5 * h * (delta @ delta))


def score(
    path: Path,
    signal: SignalModel,
    diffusion: DiffusionSpec,
    theta,
    _db: np.ndarray | None = None,
) -> np.ndarray:
    """Normalized score n^{-1/2} sum_i Sdot(theta, t_i)/sigma(X_i) dB_i(theta)."""
    theta = _check_parameter(signal.domain, theta)
    check_grid(path, signal.period)
    M, n, h = path.steps_per_period, path.n_periods, path.dt
    db = noise_increments(path, signal, diffusion, theta) if _db is None else _db
    sig = np.broadcast_to(
        np.asarray(diffusion.sigma(path.values[:-1]), dtype=np.float64), db.shape
    )
    g_tab = gradient_table(signal, theta, M, h)
    per_offset = (db / sig).reshape(n, M).sum(axis=0)
    return (g_tab @ per_offset) / np.sqrt(n)


def empirical_fisher(
    path: Path, signal: SignalModel, diffusion: DiffusionSpec, theta
) -> FisherMatrix:
    """Path-averaged information n^{-1} sum_i Sdot Sdot^T / sigma^2(X_i) h."""
    theta = _check_parameter(signal.domain, theta)
    check_grid(path, signal.period)
    M, n, h = path.steps_per_period, path.n_periods, path.dt
    v = path.values[:-1]
    inv2 = 1.0 / np.broadcast_to(np.asarray(diffusion.sigma(v), dtype=np.float64), v.shape) ** 2
    per_offset = inv2.reshape(n, M).sum(axis=0)
    g_tab = gradient_table(signal, theta, M, h)
    mat = (g_tab * per_offset) @ g_tab.T * (h / n)
    return FisherMatrix(matrix=0.5 * (mat + mat.T), provenance="empirical", theta=theta)


# ---------------------------------------------------------------------------
# Quadrature information
# ---------------------------------------------------------------------------

def _gradient_at(signal: SignalModel, theta, ts: np.ndarray) -> np.ndarray:
    g = np.asarray(signal.gradient(theta, ts), dtype=np.float64)
    if g.shape != (signal.dim, len(ts)):
        g = np.stack(
            [np.asarray(signal.gradient(theta, float(t)), dtype=np.float64) for t in ts], axis=1
        )
    return g


def _panel_edges(signal: SignalModel, theta) -> np.ndarray:
    T = signal.period
    edges = [0.0, T]
    if signal.kinks is not None:
        for k in np.atleast_1d(signal.kinks(theta)):
            if 1e-12 * T < k < T * (1.0 - 1e-12):
                edges.append(float(k))
    return np.unique(np.asarray(edges, dtype=np.float64))


def fisher_quadrature(
    signal: SignalModel,
    diffusion: DiffusionSpec,
    theta,
    weight: LambdaWeight | None = None,
    n_quad: int = 4096,
) -> FisherMatrix:
    """Information matrix by quadrature of Sdot Sdot^T w(s) over one period.

    The integration panels are aligned with the declared kink abscissae of the
    gradient and each panel uses a composite two-point Gauss rule, so the
    nodes never sit on a jump of the integrand and piecewise-quadratic
    integrands (the shipped pulse families) are integrated exactly.

    ``weight=None`` builds the constant-sigma closed-form weight; pass an
    empirical :class:`LambdaWeight` for state-dependent sigma.
    """
    theta = _check_parameter(signal.domain, theta)
    if weight is None:
        weight = LambdaWeight.constant_sigma(diffusion)
    edges = _panel_edges(signal, theta)
    T = signal.period

    nodes = []
    wq = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = max(1, int(round(n_quad * (b - a) / T)))
        step = (b - a) / m
        mids = a + (np.arange(m) + 0.5) * step
        off = step / (2.0 * np.sqrt(3.0))
        nodes.append(mids - off)
        nodes.append(mids + off)
        wq.append(np.full(2 * m, step / 2.0))
    nodes = np.concatenate(nodes)
    wq = np.concatenate(wq)

    g = _gradient_at(signal, theta, nodes)
    w = wq * weight.at(nodes)
    mat = (g * w) @ g.T
    fm = FisherMatrix(matrix=0.5 * (mat + mat.T), provenance="quadrature", theta=theta)
    fm._check_invertible()
    return fm
