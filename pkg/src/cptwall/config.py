"""Run configuration files.

Line-based ``key = value`` text; ``#`` starts a comment. Every key is
optional and all quantities are SI (rates in 1/s, lengths in m, angular
frequencies in rad/s). An empty file gives the default run: a 1.5 mm beam in a
5 mm cell, equal Rabi frequencies of 7.7e5 1/s, purely sticking walls and an
801-point sweep over +-2 pi x 50 kHz.

``serialize(parse_config(text)) == normalize(text)`` for any valid text:
:func:`normalize` canonicalises the text directly, without building a
:class:`RunConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

from .averaging import DEFAULT_ORDER, DEFAULT_RULE
from .core import PhysicalParams
from .montecarlo import MODES, TrajectoryConfig


class ConfigError(ValueError):
    """Malformed or out-of-range configuration (message names line or key)."""


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    omega_span: float = 2 * math.pi * 5e4
    omega_points: int = 801
    mode: Literal["analytic", "mc", "both"] = "analytic"
    mc: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    output_path: str = "spectrum.csv"
    quadrature_order: int = DEFAULT_ORDER
    velocity_rule: str = DEFAULT_RULE

    def __post_init__(self):
        if not (self.omega_span > 0 and math.isfinite(self.omega_span)):
            raise ConfigError("omega_span: must be a finite number > 0")
        if self.omega_points < 2:
            raise ConfigError("omega_points: must be >= 2")
        if self.mode not in ("analytic", "mc", "both"):
            raise ConfigError("mode: must be analytic, mc or both")
        if self.quadrature_order < 2:
            raise ConfigError("quadrature_order: must be >= 2")
        if self.velocity_rule not in ("doppler", "gauss-hermite"):
            raise ConfigError("velocity_rule: must be doppler or gauss-hermite")

    def grid(self):
        import numpy as np
        return np.linspace(-self.omega_span, self.omega_span, self.omega_points)


# key -> (kind, attribute, unit)
_PARAM_KEYS = {
    "gamma_ground": ("float", "gamma_ground", "1/s, ground-state relaxation"),
    "gamma_excited": ("float", "gamma_excited", "1/s, excited-state decay"),
    "laser_linewidth": ("float", "laser_linewidth", "1/s"),
    "rabi_1": ("float", "rabi_1", "1/s"),
    "rabi_2": ("float", "rabi_2", "1/s"),
    "detuning_optical": ("float", "detuning_optical", "rad/s, one-photon detuning"),
    "wavenumber": ("float", "wavenumber", "1/m"),
    "temperature": ("float", "temperature", "K"),
    "atom_mass": ("float", "atom_mass", "kg"),
    "cell_radius": ("float", "cell_radius", "m"),
    "beam_radius": ("float", "beam_radius", "m"),
    "alpha": ("float", "elastic_prob", "probability of a specular wall bounce, [0, 1]"),
}
_RUN_KEYS = {
    "omega_span": ("float", "omega_span", "rad/s, half-width of the Raman detuning grid"),
    "omega_points": ("int", "omega_points", "grid points"),
    "mode": ("choice:analytic,mc,both", "mode", ""),
    "quadrature_order": ("int", "quadrature_order", "velocity points per panel"),
    "velocity_rule": ("choice:doppler,gauss-hermite", "velocity_rule", ""),
    "output": ("str", "output_path", "CSV path"),
}
_MC_KEYS = {
    "mc_atoms": ("int", "n_atoms", "trajectories"),
    "mc_t_total": ("auto_float", "t_total", "s per trajectory, or auto"),
    "mc_burn_in": ("auto_float", "burn_in", "s, or auto (5 / gamma_ground)"),
    "mc_seed": ("int", "seed", "64-bit seed"),
    "mc_mode": ("choice:" + ",".join(MODES), "mode", ""),
    "mc_time_law": ("choice:approx,exact", "time_law", ""),
}
KEYS = {**_PARAM_KEYS, **_RUN_KEYS, **_MC_KEYS}

_RANGES = {
    "alpha": (0.0, 1.0),
    "gamma_ground": (0.0, math.inf), "gamma_excited": (0.0, math.inf),
    "laser_linewidth": (0.0, math.inf), "rabi_1": (0.0, math.inf), "rabi_2": (0.0, math.inf),
}
_POSITIVE = {"wavenumber", "temperature", "atom_mass", "cell_radius", "beam_radius",
             "omega_span", "mc_t_total"}


def _convert(key, raw, lineno):
    kind = KEYS[key][0]
    where = f"line {lineno}: {key}"
    try:
        if kind == "float" or (kind == "auto_float" and raw != "auto"):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
        elif kind == "auto_float":
            return None
        elif kind == "int":
            v = int(raw)
        elif kind.startswith("choice:"):
            allowed = kind[7:].split(",")
            if raw not in allowed:
                raise ConfigError(f"{where}: must be one of {allowed}, got {raw!r}")
            return raw
        else:
            if not raw:
                raise ValueError
            return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.replace('auto_', '')}") from None
    if key in _RANGES:
        lo, hi = _RANGES[key]
        if not lo <= v <= hi:
            raise ConfigError(f"{where}: {v!r} outside [{lo}, {hi}]")
    if key in _POSITIVE and not v > 0:
        raise ConfigError(f"{where}: must be > 0, got {v!r}")
    if key in ("mc_atoms", "omega_points", "quadrature_order") and v < 1:
        raise ConfigError(f"{where}: must be >= 1")
    if key == "mc_burn_in" and v < 0:
        raise ConfigError(f"{where}: must be >= 0")
    if key == "mc_seed" and not 0 <= v < 2**64:
        raise ConfigError(f"{where}: must be a 64-bit unsigned integer")
    return v


def _lines(text):
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first on line {seen[key][0]})")
        seen[key] = (lineno, raw)
    return seen


def parse_config(text: str) -> RunConfig:
    """Parse configuration text into a validated :class:`RunConfig`."""
    entries = _lines(text)
    values = {k: _convert(k, raw, n) for k, (n, raw) in entries.items()}
    p_kw = {KEYS[k][1]: v for k, v in values.items() if k in _PARAM_KEYS}
    run_kw = {KEYS[k][1]: v for k, v in values.items() if k in _RUN_KEYS}
    mc_kw = {KEYS[k][1]: v for k, v in values.items() if k in _MC_KEYS}
    try:
        params = PhysicalParams(**p_kw)
    except ValueError as exc:
        raise ConfigError(f"physical parameters: {exc}") from None
    try:
        mc = TrajectoryConfig(**mc_kw)
    except ValueError as exc:
        raise ConfigError(f"mc settings: {exc}") from None
    return RunConfig(params=params, mc=mc, **run_kw)


def _fmt(kind, v):
    if v is None:
        return "auto"
    if kind in ("float", "auto_float"):
        return repr(float(v))
    if kind == "int":
        return str(int(v))
    return str(v)


def _config_value(cfg: RunConfig, key):
    kind, attr, _ = KEYS[key]
    if key in _PARAM_KEYS:
        return getattr(cfg.params, attr)
    if key in _MC_KEYS:
        return getattr(cfg.mc, attr)
    return getattr(cfg, attr)


def serialize(cfg: RunConfig) -> str:
    """Every key, in canonical order, one per line."""
    return "".join(f"{k} = {_fmt(KEYS[k][0], _config_value(cfg, k))}\n" for k in KEYS)


_DEFAULT_TEXT: dict = {}


def _defaults():
    if not _DEFAULT_TEXT:
        base = RunConfig()
        _DEFAULT_TEXT.update({k: _fmt(KEYS[k][0], _config_value(base, k)) for k in KEYS})
    return _DEFAULT_TEXT


def normalize(text: str) -> str:
    """Canonical form of configuration text: comments and blank lines
    dropped, values reformatted, missing keys filled with defaults."""
    entries = _lines(text)
    out = dict(_defaults())
    for k, (n, raw) in entries.items():
        kind = KEYS[k][0]
        if kind == "auto_float" and raw == "auto":
            out[k] = "auto"
        elif kind in ("float", "auto_float"):
            out[k] = repr(float(raw))
        elif kind == "int":
            out[k] = str(int(raw))
        else:
            out[k] = raw
    return "".join(f"{k} = {out[k]}\n" for k in KEYS)


def describe_keys() -> str:
    """Human-readable key list with units and defaults."""
    d = _defaults()
    rows = []
    for k, (kind, _, unit) in KEYS.items():
        if kind.startswith("choice:"):
            unit = "one of " + kind[7:].replace(",", ", ")
        rows.append(f"{k:<18} default {d[k]:<24} {unit}")
    return "\n".join(rows)


def with_overrides(cfg: RunConfig, *, alpha=None, seed=None, atoms=None, quad=None,
                   mode=None, output=None) -> RunConfig:
    """Apply command-line overrides, re-running validation."""
    try:
        params = cfg.params if alpha is None else cfg.params.with_(elastic_prob=alpha)
    except ValueError as exc:
        raise ConfigError(f"alpha: {exc}") from None
    try:
        mc = cfg.mc
        if seed is not None:
            mc = replace(mc, seed=seed)
        if atoms is not None:
            mc = replace(mc, n_atoms=atoms)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kw = {}
    if quad is not None:
        kw["quadrature_order"] = quad
    if mode is not None:
        kw["mode"] = mode
    if output is not None:
        kw["output_path"] = output
    return replace(cfg, params=params, mc=mc, **kw)


__all__ = ["RunConfig", "ConfigError", "parse_config", "serialize", "normalize",
           "describe_keys", "with_overrides", "KEYS"]
