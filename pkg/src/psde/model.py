"""Parametrized periodic drift signals and diffusion coefficients.

The observed process solves

    dX_t = [S(theta, t) + b(X_t)] dt + sigma(X_t) dW_t,    X_0 = x0,

where ``S(theta, .)`` is a known-period T-periodic signal depending on an
unknown parameter ``theta`` in an open rectangle of R^d, while ``b`` and
``sigma`` do not depend on ``theta``.  This module defines the containers for
the two model halves (:class:`SignalModel`, :class:`DiffusionSpec`), the
domain-gated evaluation operations, and three concrete signal families:

* ``triangular``      -- unit triangular pulse centred at ``theta`` (d = 1),
* ``power_pulse``     -- pulse ``(1 - |t - theta|)^alpha``, ``alpha > 1`` (d = 1),
* ``phase_amplitude`` -- ``theta_2 * f(t - theta_1)`` for a periodic base
  waveform ``f`` (d = 2).

All time arguments are reduced modulo the period before evaluation, so the
returned signal is periodic by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidFamilyConfig, ParameterOutOfDomain

__all__ = [
    "ParameterDomain",
    "SignalModel",
    "DiffusionSpec",
    "wrap_time",
    "signal_value",
    "signal_gradient",
    "builtin_family",
    "sine_wave",
]


def wrap_time(t, period: float):
    """Reduce ``t`` modulo ``period`` into ``[0, period)``.

    Computed as ``t - period * floor(t / period)`` with a post-correction for
    the two float edge cases (result landing exactly on ``period`` or below
    zero when ``t / period`` rounds across an integer).  For ``t`` an exact
    float multiple of ``period`` the result is exactly ``0.0``.
    """
    t = np.asarray(t, dtype=np.float64)
    r = t - period * np.floor(t / period)
    r = np.where(r >= period, r - period, r)
    r = np.where(r < 0.0, r + period, r)
    if r.ndim == 0:
        return float(r)
    return r


@dataclass(frozen=True)
class ParameterDomain:
    """Open rectangle in R^d given by per-coordinate (low, high) bounds."""

    bounds: tuple[tuple[float, float], ...]

    def __init__(self, bounds: Sequence[Sequence[float]]):
        clean = tuple((float(lo), float(hi)) for lo, hi in bounds)
        for lo, hi in clean:
            if not lo < hi:
                raise InvalidFamilyConfig(f"empty domain interval ({lo}, {hi})")
        object.__setattr__(self, "bounds", clean)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def contains(self, zeta) -> bool:
        """Strict interior membership (boundary points are rejected)."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        if zeta.shape != (self.dim,):
            raise DimensionMismatch(
                f"parameter has shape {zeta.shape}, domain is {self.dim}-dimensional"
            )
        return all(lo < z < hi for z, (lo, hi) in zip(zeta, self.bounds))

    def midpoint(self) -> np.ndarray:
        return np.array([0.5 * (lo + hi) for lo, hi in self.bounds])

    def clip_inside(self, zeta, margin: float = 1e-9) -> np.ndarray:
        """Clip a point into the open rectangle, ``margin`` relative to each width."""
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64)).copy()
        for j, (lo, hi) in enumerate(self.bounds):
            eps = margin * (hi - lo)
            zeta[j] = min(max(zeta[j], lo + eps), hi - eps)
        return zeta


def _check_parameter(domain: ParameterDomain, zeta) -> np.ndarray:
    zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
    if not domain.contains(zeta):
        raise ParameterOutOfDomain(f"parameter {zeta.tolist()} not in open domain {domain.bounds}")
    return zeta


@dataclass(frozen=True)
class SignalModel:
    """A parametrized T-periodic drift signal and its parameter gradient.

    ``value(zeta, t)`` returns S(zeta, t mod T) (scalar t -> float, array t ->
    array).  ``gradient(zeta, t)`` returns the d-vector of partial derivatives
    in ``zeta``; for an array of times the shape is (d, len(t)).  Both
    callables must be pure and vectorized over ``t``.

    ``kinks(zeta)``, when provided, lists the abscissae in [0, T) where the
    gradient is non-smooth; quadrature routines align integration panels with
    them.
    """

    dim: int
    domain: ParameterDomain
    value: Callable
    gradient: Callable
    period: float
    kinks: Callable | None = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.period <= 0:
            raise InvalidFamilyConfig("signal period must be positive")
        if self.domain.dim != self.dim:
            raise InvalidFamilyConfig("domain dimension does not match signal dimension")


@dataclass(frozen=True)
class DiffusionSpec:
    """State-dependent drift offset b(.) and diffusion coefficient sigma(.).

    ``b`` and ``sigma`` must be pure, elementwise-vectorized callables; sigma
    must be strictly positive.  Positivity is checked by sampling over
    ``validation_range`` at construction time (Lipschitz continuity is the
    caller's responsibility).
    """

    b: Callable
    sigma: Callable
    period: float
    x0: float = 0.0
    validation_range: tuple[float, float] = (-20.0, 20.0)

    def __post_init__(self):
        if self.period <= 0:
            raise InvalidFamilyConfig("diffusion period must be positive")
        lo, hi = self.validation_range
        probe = np.linspace(lo, hi, 201)
        probe = np.append(probe, self.x0)
        sig = np.broadcast_to(np.asarray(self.sigma(probe), dtype=np.float64), probe.shape)
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0.0):
            raise InvalidFamilyConfig("sigma must be finite and strictly positive on the validation range")

    def sigma_constant(self) -> float | None:
        """The constant value of sigma if it is state-independent, else None."""
        probe = np.array([-7.3, -1.0, 0.0, 0.5, 4.2, 11.8])
        sig = np.broadcast_to(np.asarray(self.sigma(probe), dtype=np.float64), probe.shape)
        if np.all(sig == sig[0]):
            return float(sig[0])
        return None


# ---------------------------------------------------------------------------
# Gated evaluation operations
# ---------------------------------------------------------------------------

def signal_value(model: SignalModel, zeta, t):
    """Evaluate S(zeta, t mod T); rejects zeta outside the open domain."""
    zeta = _check_parameter(model.domain, zeta)
    return model.value(zeta, t)


def signal_gradient(model: SignalModel, zeta, t):
    """Evaluate the parameter gradient of S at (zeta, t mod T); domain-gated."""
    zeta = _check_parameter(model.domain, zeta)
    return model.gradient(zeta, t)


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

def sine_wave(period: float):
    """Base waveform sin(2*pi*t/period) together with its derivative."""
    w = 2.0 * np.pi / period

    def f(t):
        return np.sin(w * t)

    def fprime(t):
        return w * np.cos(w * t)

    return f, fprime


def _pulse_geometry(t, zeta0: float, period: float):
    """Distance to the pulse centre on the circle and the side indicator.

    Returns (dist, side) where ``dist`` is the torus distance between
    ``t mod T`` and ``zeta0``, and ``side`` is +1 right of the centre, -1 left
    of it, 0 exactly at centre/antipode.  ``t`` is reduced modulo the period
    before the centre is subtracted, so values at ``t`` and ``t + k T`` agree
    bit for bit whenever both times are exactly representable.
    """
    u = wrap_time(np.asarray(wrap_time(t, period), dtype=np.float64) - zeta0, period)
    dist = np.minimum(u, period - u)
    side = np.where((u > 0.0) & (u < period / 2.0), 1.0, np.where(u > period / 2.0, -1.0, 0.0))
    return u, dist, side


def _make_triangular(period: float) -> SignalModel:
    if period <= 2.0:
        raise InvalidFamilyConfig("triangular family needs period > 2 so the pulse fits")
    domain = ParameterDomain([(0.0, period)])

    def value(zeta, t):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        _, dist, _ = _pulse_geometry(t, zeta[0], period)
        out = np.maximum(1.0 - dist, 0.0)
        if out.ndim == 0:
            return float(out)
        return out

    def gradient(zeta, t):
        # dS/dtheta = +1 on (theta, theta+1), -1 on (theta-1, theta), 0 at the
        # three tie points (a Lebesgue-null set; the symmetric value is used).
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        u, dist, side = _pulse_geometry(t, zeta[0], period)
        g = np.where(dist < 1.0, side, 0.0)
        return g.reshape((1,) + np.shape(u))

    def kinks(zeta):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        return np.sort(wrap_time(np.array([zeta[0] - 1.0, zeta[0], zeta[0] + 1.0]), period))

    return SignalModel(
        dim=1, domain=domain, value=value, gradient=gradient, period=period,
        kinks=kinks, name="triangular",
    )


def _make_power_pulse(period: float, alpha: float) -> SignalModel:
    if alpha <= 1.0:
        raise InvalidFamilyConfig("power_pulse needs exponent alpha > 1")
    if period <= 2.0:
        raise InvalidFamilyConfig("power_pulse family needs period > 2 so the pulse fits")
    domain = ParameterDomain([(0.0, period)])

    def value(zeta, t):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        _, dist, _ = _pulse_geometry(t, zeta[0], period)
        out = np.maximum(1.0 - dist, 0.0) ** alpha
        if out.ndim == 0:
            return float(out)
        return out

    def gradient(zeta, t):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        u, dist, side = _pulse_geometry(t, zeta[0], period)
        g = np.where(dist < 1.0, alpha * np.maximum(1.0 - dist, 0.0) ** (alpha - 1.0) * side, 0.0)
        return g.reshape((1,) + np.shape(u))

    def kinks(zeta):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        return np.sort(wrap_time(np.array([zeta[0] - 1.0, zeta[0], zeta[0] + 1.0]), period))

    return SignalModel(
        dim=1, domain=domain, value=value, gradient=gradient, period=period,
        kinks=kinks, name="power_pulse", meta={"alpha": float(alpha)},
    )


def _make_phase_amplitude(
    period: float,
    base: Callable | None = None,
    base_derivative: Callable | None = None,
    amplitude_max: float = 1e6,
    base_kinks: Sequence[float] = (),
    base_integrals: dict | None = None,
) -> SignalModel:
    if base is None:
        if base_derivative is not None:
            raise InvalidFamilyConfig("base_derivative given without base waveform")
        base, base_derivative = sine_wave(period)
        base_integrals = {
            "f2": period / 2.0,
            "fprime_f": 0.0,
            "fprime2": (2.0 * np.pi / period) ** 2 * period / 2.0,
        }
    if base_derivative is None:
        raise InvalidFamilyConfig("phase_amplitude needs the base derivative f'")
    if amplitude_max <= 0:
        raise InvalidFamilyConfig("amplitude_max must be positive")

    # The base waveform must be non-constant, otherwise the phase is not
    # identifiable; checked on a sample grid.
    probe = np.linspace(0.0, period, 257, endpoint=False)
    vals = np.broadcast_to(np.asarray(base(probe), dtype=np.float64), probe.shape)
    if np.max(vals) - np.min(vals) <= 1e-12 * (1.0 + np.max(np.abs(vals))):
        raise InvalidFamilyConfig("phase_amplitude base waveform must be non-constant")

    domain = ParameterDomain([(0.0, period), (0.0, amplitude_max)])
    f, fp = base, base_derivative

    def value(zeta, t):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        arg = wrap_time(np.asarray(wrap_time(t, period), dtype=np.float64) - zeta[0], period)
        out = zeta[1] * np.asarray(f(arg), dtype=np.float64)
        if out.ndim == 0:
            return float(out)
        return out

    def gradient(zeta, t):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        arg = wrap_time(np.asarray(wrap_time(t, period), dtype=np.float64) - zeta[0], period)
        g1 = -zeta[1] * np.asarray(fp(arg), dtype=np.float64)
        g2 = np.asarray(f(arg), dtype=np.float64)
        return np.stack([np.broadcast_to(g1, np.shape(arg)), np.broadcast_to(g2, np.shape(arg))])

    kinks = None
    if base_kinks:
        base_kinks_arr = np.asarray(base_kinks, dtype=np.float64)

        def kinks(zeta):
            zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
            return np.sort(wrap_time(base_kinks_arr + zeta[0], period))

    return SignalModel(
        dim=2, domain=domain, value=value, gradient=gradient, period=period,
        kinks=kinks, name="phase_amplitude",
        meta={"base_integrals": dict(base_integrals or {}), "amplitude_max": float(amplitude_max)},
    )


_FAMILIES = {
    "triangular": _make_triangular,
    "power_pulse": _make_power_pulse,
    "phase_amplitude": _make_phase_amplitude,
}


def builtin_family(name: str, **params) -> SignalModel:
    """Construct one of the shipped signal families by name.

    Parameters
    ----------
    name : str
        One of ``triangular``, ``power_pulse``, ``phase_amplitude``.
    params
        ``period`` (all families); ``alpha`` (power_pulse); ``base``,
        ``base_derivative``, ``amplitude_max``, ``base_kinks``,
        ``base_integrals`` (phase_amplitude, all optional -- the default base
        waveform is a sine).

    Raises
    ------
    InvalidFamilyConfig
        Unknown family name or inadmissible parameters.
    """
    try:
        maker = _FAMILIES[name]
    except KeyError:
        raise InvalidFamilyConfig(
            f"unknown family {name!r}; available: {sorted(_FAMILIES)}"
        ) from None
    if "period" not in params:
        raise InvalidFamilyConfig("family config needs a period")
    return maker(**params)
