"""Euler-Maruyama trajectories, segment views, and noise reconstruction.

A trajectory over ``n`` periods is simulated on a uniform grid with ``M``
steps per period, ``h = T / M``:

    X_{i+1} = X_i + [S(theta, t_i) + b(X_i)] h + sigma(X_i) dB_i,
    dB_i = sqrt(h) Z_i,   Z_i iid N(0, 1).

The Gaussian draws come from a counter-based Philox generator keyed by
``(seed, stream)``, so replicate streams are independent and reproducible
under any execution order.

The state is carried as a compensated (hi, lo) float pair: each Euler update
accumulates the drift and noise terms into the running sum exactly (to about
2^-105 relative), with ``Path.values`` holding the hi words.  This makes the
update algebraically invertible in floating point: ``noise_increments``
evaluated at the simulating parameter returns exactly the ``dB_i`` terms that
drove the path, which downstream likelihood-ratio identities rely on.

Signal evaluations along the grid use one table of per-period values
``S(theta, j h), j = 0..M-1`` reused cyclically, so the simulated drift is
T-periodic bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path as FsPath
import struct

import numpy as np
from numpy.random import Generator, Philox

from .errors import InvalidFamilyConfig, NonFiniteState
from .model import DiffusionSpec, SignalModel, _check_parameter

__all__ = [
    "Path",
    "Segment",
    "simulate_path",
    "segment_chain",
    "noise_increments",
    "write_path",
    "read_path",
]

_BIN_MAGIC = b"PSDEPATH"


# ---------------------------------------------------------------------------
# Path container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Path:
    """A discretized trajectory on the uniform grid 0, h, 2h, ..., n*M*h.

    ``values`` has length ``n_periods * steps_per_period + 1``.  The period is
    always derived as ``steps_per_period * dt``.  ``seed``/``stream`` identify
    the RNG stream that produced the path (seed 0 is the convention for
    externally loaded paths of unknown provenance).
    """

    dt: float
    steps_per_period: int
    values: np.ndarray = field(repr=False)
    n_periods: int
    seed: int
    stream: int = 0
    comp: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dt <= 0 or self.steps_per_period < 1 or self.n_periods < 1:
            raise InvalidFamilyConfig("Path needs dt > 0, steps_per_period >= 1, n_periods >= 1")
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or len(vals) != self.n_periods * self.steps_per_period + 1:
            raise InvalidFamilyConfig(
                f"values must have length n_periods*steps_per_period + 1 = "
                f"{self.n_periods * self.steps_per_period + 1}, got {np.shape(self.values)}"
            )
        object.__setattr__(self, "values", vals)
        if self.comp is not None:
            comp = np.ascontiguousarray(self.comp, dtype=np.float64)
            if comp.shape != vals.shape:
                raise InvalidFamilyConfig("compensation array must match values")
            object.__setattr__(self, "comp", comp)

    @property
    def period(self) -> float:
        return self.steps_per_period * self.dt

    @property
    def n_steps(self) -> int:
        return self.n_periods * self.steps_per_period

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class Segment:
    """The k-th period of a path (1-based); shares endpoints with neighbours."""

    index: int
    values: np.ndarray = field(repr=False)
    dt: float


def segment_chain(path: Path) -> list[Segment]:
    """Split a path into its n_periods period-segments (views, not copies)."""
    M = path.steps_per_period
    return [
        Segment(index=k, values=path.values[(k - 1) * M : k * M + 1], dt=path.dt)
        for k in range(1, path.n_periods + 1)
    ]


# ---------------------------------------------------------------------------
# Grid tables
# ---------------------------------------------------------------------------

def signal_table(signal: SignalModel, theta, M: int, h: float) -> np.ndarray:
    """S(theta, j*h) for j = 0..M-1; the canonical per-period drift samples."""
    ts = h * np.arange(M)
    vals = np.asarray(signal.value(np.atleast_1d(theta), ts), dtype=np.float64)
    if vals.shape != ts.shape:
        vals = np.array([signal.value(np.atleast_1d(theta), float(t)) for t in ts])
    return vals


def gradient_table(signal: SignalModel, theta, M: int, h: float) -> np.ndarray:
    """dS/dtheta(theta, j*h) as a (dim, M) array."""
    ts = h * np.arange(M)
    g = np.asarray(signal.gradient(np.atleast_1d(theta), ts), dtype=np.float64)
    if g.shape != (signal.dim, M):
        g = np.stack(
            [np.asarray(signal.gradient(np.atleast_1d(theta), float(t)), dtype=np.float64) for t in ts],
            axis=1,
        )
    return g


def check_grid(path: Path, period: float):
    """Verify the path grid matches a model period (M*h == T within rounding)."""
    if abs(path.period - period) > 4.0 * np.spacing(period):
        raise InvalidFamilyConfig(
            f"path grid period {path.period!r} does not match model period {period!r}"
        )


# ---------------------------------------------------------------------------
# Core integrator
# ---------------------------------------------------------------------------

def _two_sum(a, b):
    """Knuth TwoSum: s + err == a + b exactly, s = fl(a + b)."""
    s = a + b
    bv = s - a
    err = (a - (s - bv)) + (b - bv)
    return s, err


def _integrate(signal, diffusion, theta, db, M: int):
    """Run the compensated Euler recursion driven by given Brownian increments.

    ``db`` is time-major with shape (L, B).  Returns (hi, lo) arrays of shape
    (L+1, B): hi the float64 states, lo the compensation words.
    """
    L, B = db.shape
    h = diffusion.period / M
    sig_tab = signal_table(signal, theta, M, h)
    b_fn = diffusion.b
    sigma_const = diffusion.sigma_constant()
    if sigma_const is not None:
        noise = db * sigma_const
    else:
        noise = None
        sigma_fn = diffusion.sigma

    hi = np.empty((L + 1, B))
    lo = np.empty((L + 1, B))
    x = np.full(B, float(diffusion.x0))
    xl = np.zeros(B)
    hi[0] = x
    lo[0] = xl

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for i in range(L):
            a = (sig_tab[i % M] + b_fn(x)) * h
            c = noise[i] if noise is not None else sigma_fn(x) * db[i]
            # exact accumulation: x + a + c carried as (hi, lo)
            s1, e1 = _two_sum(x, a)
            s2, e2 = _two_sum(s1, c)
            xl = xl + (e1 + e2)
            x = s2 + xl
            xl = xl - (x - s2)
            hi[i + 1] = x
            lo[i + 1] = xl
    return hi, lo


def _philox_normals(seed: int, stream: int, count: int) -> np.ndarray:
    gen = Generator(Philox(key=np.array([seed, stream], dtype=np.uint64)))
    return gen.standard_normal(count)


def _simulate_batch(
    signal: SignalModel,
    diffusion: DiffusionSpec,
    theta,
    n_periods: int,
    steps_per_period: int,
    seed: int,
    streams,
):
    """Simulate one path per entry of ``streams``.

    Returns (paths, ok) where ok[r] is False for paths that left the finite
    range (their Path objects still carry the non-finite values).
    """
    theta = _check_parameter(signal.domain, theta)
    if signal.period != diffusion.period:
        raise InvalidFamilyConfig("signal and diffusion periods differ")
    if n_periods < 1 or steps_per_period < 2:
        raise InvalidFamilyConfig("need n_periods >= 1 and steps_per_period >= 2")
    M = int(steps_per_period)
    L = n_periods * M
    h = diffusion.period / M
    sqrth = np.sqrt(h)

    streams = [int(s) for s in streams]
    B = len(streams)
    db = np.empty((L, B))
    for r, s in enumerate(streams):
        db[:, r] = _philox_normals(seed, s, L)
    db *= sqrth

    hi, lo = _integrate(signal, diffusion, theta, db, M)
    ok = np.isfinite(hi[-1])
    paths = [
        Path(
            dt=h,
            steps_per_period=M,
            values=np.ascontiguousarray(hi[:, r]),
            n_periods=n_periods,
            seed=seed,
            stream=streams[r],
            comp=np.ascontiguousarray(lo[:, r]),
        )
        for r in range(B)
    ]
    return paths, ok


def simulate_path(
    signal: SignalModel,
    diffusion: DiffusionSpec,
    theta,
    n_periods: int,
    steps_per_period: int,
    seed: int,
    stream: int = 0,
) -> Path:
    """Simulate one trajectory of the model over [0, n_periods * T].

    Identical arguments always produce a bit-identical path.  Raises
    ``NonFiniteState`` if the recursion leaves the finite float range (step
    too coarse or explosive user coefficients), ``ParameterOutOfDomain`` if
    ``theta`` is not interior to the signal's parameter domain.
    """
    paths, ok = _simulate_batch(
        signal, diffusion, theta, n_periods, steps_per_period, seed, [stream]
    )
    if not ok[0]:
        raise NonFiniteState(
            f"state became non-finite (seed={seed}, stream={stream}); "
            "reduce the step size or check the model coefficients"
        )
    return paths[0]


def _path_from_increments(
    signal: SignalModel,
    diffusion: DiffusionSpec,
    theta,
    db: np.ndarray,
    steps_per_period: int,
    seed: int = 0,
    stream: int = 0,
) -> Path:
    """Build the path driven by explicit Brownian increments ``db`` of length L."""
    theta = _check_parameter(signal.domain, theta)
    db = np.asarray(db, dtype=np.float64)
    M = int(steps_per_period)
    if db.ndim != 1 or len(db) % M != 0:
        raise InvalidFamilyConfig("increment array length must be a multiple of steps_per_period")
    hi, lo = _integrate(signal, diffusion, theta, db[:, None], M)
    return Path(
        dt=diffusion.period / M,
        steps_per_period=M,
        values=np.ascontiguousarray(hi[:, 0]),
        n_periods=len(db) // M,
        seed=seed,
        stream=stream,
        comp=np.ascontiguousarray(lo[:, 0]),
    )


# ---------------------------------------------------------------------------
# Noise reconstruction
# ---------------------------------------------------------------------------

def noise_increments(path: Path, signal: SignalModel, diffusion: DiffusionSpec, theta) -> np.ndarray:
    """Brownian increments of the path under the hypothesized parameter.

    Returns dB_i = (dX_i - [S(theta, t_i) + b(X_i)] h) / sigma(X_i) for each
    grid step.  On a simulated path evaluated at the simulating parameter this
    reproduces the increments that drove the Euler recursion exactly (the
    state difference is formed from the compensated representation).  Under a
    different parameter the increments pick up the signal-gap drift.
    """
    theta = _check_parameter(signal.domain, theta)
    check_grid(path, signal.period)
    v = path.values
    M = path.steps_per_period
    h = path.dt
    sig_tab = signal_table(signal, theta, M, h)
    s_tile = np.tile(sig_tab, path.n_periods)
    bx = np.broadcast_to(np.asarray(diffusion.b(v[:-1]), dtype=np.float64), v[:-1].shape)
    a = (s_tile + bx) * h

    s, e = _two_sum(v[1:], -v[:-1])
    t, f = _two_sum(s, -a)
    rest = e + f
    if path.comp is not None:
        rest = rest + (path.comp[1:] - path.comp[:-1])
    num = t + rest
    sig = np.broadcast_to(np.asarray(diffusion.sigma(v[:-1]), dtype=np.float64), v[:-1].shape)
    return num / sig


# ---------------------------------------------------------------------------
# Import / export
# ---------------------------------------------------------------------------

def write_path(path: Path, file, fmt: str = "csv") -> None:
    """Write a path to ``file`` as CSV (default) or flat binary.

    CSV: a header line ``dt,M,n,seed``, the four header values, then one grid
    value per line, all floats with 17 significant digits.  Binary: an 8-byte
    magic, the same four header fields (float64 + 3x uint64, little endian),
    then the raw float64 values.  Neither format carries the compensation
    words; re-imported paths reconstruct noise only to float rounding.
    """
    file = FsPath(file)
    if fmt == "csv":
        lines = ["dt,M,n,seed"]
        lines.append(
            f"{path.dt:.17g},{path.steps_per_period},{path.n_periods},{path.seed}"
        )
        lines.extend(f"{v:.17g}" for v in path.values)
        file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "bin":
        header = _BIN_MAGIC + struct.pack(
            "<dQQQ", path.dt, path.steps_per_period, path.n_periods, path.seed
        )
        file.write_bytes(header + np.ascontiguousarray(path.values).tobytes())
    else:
        raise ValueError(f"unknown path format {fmt!r}")


def read_path(file, fmt: str | None = None) -> Path:
    """Read a path written by :func:`write_path`; format sniffed when omitted."""
    file = FsPath(file)
    raw = file.read_bytes()
    if fmt is None:
        fmt = "bin" if raw.startswith(_BIN_MAGIC) else "csv"
    if fmt == "bin":
        if not raw.startswith(_BIN_MAGIC):
            raise InvalidFamilyConfig(f"{file} is not a psde binary path file")
        off = len(_BIN_MAGIC)
        dt, M, n, seed = struct.unpack_from("<dQQQ", raw, off)
        values = np.frombuffer(raw, dtype="<f8", offset=off + struct.calcsize("<dQQQ")).copy()
        return Path(dt=dt, steps_per_period=int(M), values=values, n_periods=int(n), seed=int(seed))
    lines = raw.decode("utf-8").splitlines()
    if len(lines) < 3 or lines[0].strip() != "dt,M,n,seed":
        raise InvalidFamilyConfig(f"{file} is not a psde CSV path file")
    dt_s, m_s, n_s, seed_s = lines[1].split(",")
    values = np.array([float(x) for x in lines[2:] if x.strip()], dtype=np.float64)
    return Path(
        dt=float(dt_s),
        steps_per_period=int(m_s),
        values=values,
        n_periods=int(n_s),
        seed=int(seed_s),
    )
