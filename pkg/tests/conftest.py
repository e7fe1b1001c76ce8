import numpy as np
import pytest

from psde import DiffusionSpec, ParameterDomain, SignalModel, builtin_family

PERIOD = 10.0


@pytest.fixture(scope="session")
def triangular():
    return builtin_family("triangular", period=PERIOD)


@pytest.fixture(scope="session")
def power2():
    return builtin_family("power_pulse", period=PERIOD, alpha=2.0)


@pytest.fixture(scope="session")
def phase_amp():
    return builtin_family("phase_amplitude", period=PERIOD)


@pytest.fixture(scope="session")
def ou_half():
    """OU diffusion with beta=1, sigma=0.5."""
    return DiffusionSpec(b=lambda x: -x, sigma=lambda x: 0.5, period=PERIOD)


@pytest.fixture(scope="session")
def ou_unit():
    return DiffusionSpec(b=lambda x: -x, sigma=lambda x: 1.0, period=PERIOD)


def constant_signal(c: float, period: float = PERIOD) -> SignalModel:
    """S(zeta, t) = c, gradient 0; for deterministic-drift oracles."""

    def value(zeta, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.broadcast_to(np.float64(c), t.shape).copy()
        return float(out) if out.ndim == 0 else out

    def gradient(zeta, t):
        t = np.asarray(t, dtype=np.float64)
        return np.zeros((1,) + t.shape)

    return SignalModel(
        dim=1, domain=ParameterDomain([(0.0, period)]), value=value,
        gradient=gradient, period=period, name="constant",
    )


def linear_signal(c: float, period: float = PERIOD, bounds=((0.0, 10.0),)) -> SignalModel:
    """S(zeta, t) = c * zeta_0, constant in t; gradient is the constant c."""

    def value(zeta, t):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=np.float64))
        t = np.asarray(t, dtype=np.float64)
        out = np.broadcast_to(c * zeta[0], t.shape).copy()
        return float(out) if out.ndim == 0 else out

    def gradient(zeta, t):
        t = np.asarray(t, dtype=np.float64)
        return np.full((1,) + t.shape, c)

    return SignalModel(
        dim=1, domain=ParameterDomain(bounds), value=value,
        gradient=gradient, period=period, name="linear",
    )
