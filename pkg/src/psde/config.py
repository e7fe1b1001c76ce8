"""Declarative experiment configuration (TOML) with strict schema validation.

One config file describes one experiment: the signal family, the diffusion
coefficients, grid/seed choices, estimator settings, Monte Carlo study sizes,
and optional hard pass/fail thresholds for ``--check`` mode.  Unknown keys
are rejected (reproducibility depends on a config meaning exactly one thing),
and schema errors are reported with best-effort line numbers.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path as FsPath

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

import numpy as np

from .errors import ConfigError
from .estimators import SearchConfig
from .mcstudy import StudyConfig
from .model import DiffusionSpec, SignalModel, builtin_family

__all__ = ["ExperimentConfig", "load_config"]


_SCHEMA = {
    "model": {
        "family": str,
        "period": (int, float),
        "alpha": (int, float),
        "base": str,
        "amplitude_max": (int, float),
    },
    "diffusion": {
        "kind": str,
        "beta": (int, float),
        "sigma": (int, float),
        "x0": (int, float),
    },
    "simulate": {
        "theta": list,
        "n_periods": int,
        "steps_per_period": int,
        "seed": int,
        "stream": int,
        "format": str,
    },
    "estimate": {
        "grid_points": int,
        "dyadic_level": int,
        "fisher_mode": str,
        "n_quad": int,
        "anchor": list,
        "search_low": list,
        "search_high": list,
        "grid_mle": bool,
        "mle_reference": list,
        "path": str,
    },
    "fisher": {
        "n_quad": int,
        "empirical": bool,
    },
    "study": {
        "n_replicates": int,
        "base_seed": int,
        "h_directions": list,
        "estimators": bool,
        "grid_mle": bool,
        "batch_size": int,
        "halve_step": bool,
    },
    "check": None,  # free-form <metric>_min / <metric>_max numeric keys
}

_REQUIRED = {"model": ["family", "period"], "simulate": ["theta"]}

_DEFAULTS = {
    "diffusion": {"kind": "ou", "beta": 1.0, "sigma": 1.0, "x0": 0.0},
    "simulate": {"n_periods": 100, "steps_per_period": 512, "seed": 1, "stream": 0, "format": "csv"},
    "estimate": {
        "grid_points": 32, "dyadic_level": 0, "fisher_mode": "quadrature", "n_quad": 2048,
        "anchor": [], "search_low": [], "search_high": [], "grid_mle": False, "mle_reference": [],
    },
    "fisher": {"n_quad": 4096, "empirical": False},
    "study": {
        "n_replicates": 100, "base_seed": 1, "h_directions": [], "estimators": True,
        "grid_mle": False, "batch_size": 64, "halve_step": False,
    },
}


def _key_line(text: str, key: str) -> str:
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and (
            stripped[len(key):].lstrip().startswith("=") or stripped == f"[{key}]"
        ):
            return f" (line {i})"
        if stripped == f"[{key}]":
            return f" (line {i})"
    return ""


def _validate(raw: dict, text: str) -> dict:
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]{_key_line(text, section)}")
        if not isinstance(body, dict):
            raise ConfigError(f"section [{section}] must be a table{_key_line(text, section)}")
        allowed = _SCHEMA[section]
        for key, value in body.items():
            if allowed is None:  # [check]: numeric thresholds only
                if not key.endswith(("_min", "_max")):
                    raise ConfigError(
                        f"[check] keys must end in _min or _max: {key!r}{_key_line(text, key)}"
                    )
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f"[check] {key} must be a number{_key_line(text, key)}")
                continue
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]{_key_line(text, key)}")
            want = allowed[key]
            if isinstance(value, bool) and want is not bool:
                raise ConfigError(f"[{section}] {key} has wrong type{_key_line(text, key)}")
            if not isinstance(value, want):
                raise ConfigError(
                    f"[{section}] {key} must be {getattr(want, '__name__', want)}"
                    f"{_key_line(text, key)}"
                )
    for section, keys in _REQUIRED.items():
        if section not in raw:
            raise ConfigError(f"missing required section [{section}]")
        for key in keys:
            if key not in raw[section]:
                raise ConfigError(f"missing required key {key!r} in [{section}]")
    merged = {}
    for section in _SCHEMA:
        body = dict(_DEFAULTS.get(section, {}))
        body.update(raw.get(section, {}))
        merged[section] = body
    return merged


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description plus builders for the model objects."""

    data: dict
    source: str = "<memory>"

    def build_signal(self) -> SignalModel:
        m = self.data["model"]
        kwargs = {"period": float(m["period"])}
        if m["family"] == "power_pulse":
            if "alpha" not in m:
                raise ConfigError("[model] power_pulse needs alpha")
            kwargs["alpha"] = float(m["alpha"])
        if m["family"] == "phase_amplitude":
            if m.get("base", "sin") != "sin":
                raise ConfigError("config files support base = 'sin'; custom waveforms via the API")
            if "amplitude_max" in m:
                kwargs["amplitude_max"] = float(m["amplitude_max"])
        return builtin_family(m["family"], **kwargs)

    def build_diffusion(self) -> DiffusionSpec:
        d = self.data["diffusion"]
        sigma = float(d["sigma"])
        if sigma <= 0:
            raise ConfigError("[diffusion] sigma must be positive")
        if d["kind"] == "ou":
            beta = float(d["beta"])
            b = lambda x: -beta * x  # noqa: E731
        elif d["kind"] == "none":
            b = lambda x: 0.0  # noqa: E731
        else:
            raise ConfigError(f"unknown diffusion kind {d['kind']!r} (use 'ou' or 'none')")
        return DiffusionSpec(
            b=b, sigma=lambda x: sigma, period=float(self.data["model"]["period"]),
            x0=float(d["x0"]),
        )

    def theta(self) -> np.ndarray:
        return np.asarray(self.data["simulate"]["theta"], dtype=np.float64)

    def build_search(self, signal: SignalModel) -> SearchConfig:
        e = self.data["estimate"]
        bounds = None
        if e["search_low"] or e["search_high"]:
            lo, hi = e["search_low"], e["search_high"]
            if len(lo) != signal.dim or len(hi) != signal.dim:
                raise ConfigError("[estimate] search_low/search_high must have the parameter dimension")
            bounds = tuple((float(a), float(b)) for a, b in zip(lo, hi))
        level = e["dyadic_level"] if e["dyadic_level"] > 0 else None
        return SearchConfig(bounds=bounds, grid_points=e["grid_points"], dyadic_level=level)

    def build_study(self) -> StudyConfig:
        signal = self.build_signal()
        diffusion = self.build_diffusion()
        s = self.data["study"]
        e = self.data["estimate"]
        hs = s["h_directions"] or [[1.0] * signal.dim]
        anchor = np.asarray(e["anchor"], dtype=np.float64) if e["anchor"] else None
        return StudyConfig(
            signal=signal,
            diffusion=diffusion,
            theta_true=self.theta(),
            n_periods=self.data["simulate"]["n_periods"],
            steps_per_period=self.data["simulate"]["steps_per_period"],
            n_replicates=s["n_replicates"],
            base_seed=s["base_seed"],
            h_directions=tuple(tuple(float(x) for x in h) for h in hs),
            run_estimators=s["estimators"],
            run_grid_mle=s["grid_mle"],
            search=self.build_search(signal),
            anchor=anchor,
            fisher_mode=e["fisher_mode"],
            n_quad=e["n_quad"],
            batch_size=s["batch_size"],
        )

    def checks(self) -> list:
        """[(metric, op, threshold)] from the [check] section; op is 'min' or 'max'."""
        out = []
        for key, value in sorted(self.data["check"].items()):
            metric, op = key.rsplit("_", 1)
            out.append((metric, op, float(value)))
        return out


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment config file."""
    path = FsPath(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML syntax error: {exc}") from None
    try:
        merged = _validate(raw, text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ExperimentConfig(data=merged, source=str(path))
