"""Run configuration: ``key = value`` documents with optional sections.

Top-level keys (before any header) belong to the implicit ``[general]``
section. Recognized sections are ``[material]``, ``[domain]``,
``[stepper]``, ``[initial]`` and ``[output]``.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_model import (
    ColumnDomain,
    MaterialParams,
    ModelError,
    PRESETS,
    StateField,
    build_column,
    preset,
)
from .evolution import StepperConfig

__all__ = [
    "ConfigError",
    "InitialCondition",
    "RunConfig",
    "parse_config",
    "load_config",
    "build_initial_state",
    "INITIAL_KINDS",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed or invalid configuration document."""


INITIAL_KINDS = ("uniform", "layered", "equilibrium", "from_file")

_MATERIAL_KEYS = {("lambda" if f == "lam" else f): f for f in MaterialParams.field_names()}
_DOMAIN_KEYS = {"a": float, "b": float, "n_cells": int, "area": float, "area_bottom": float,
                "area_top": float, "perimeter": float}
_STEPPER_KEYS = {"dt": float, "t_end": float, "scheme": str, "R_cutoff": float, "picard_tol": float,
                 "picard_max_iter": int, "picard_window": float, "linear_tol": float}
_INITIAL_KEYS = {"kind": str, "theta0": float, "U0": float, "chi0": float, "interface": float,
                 "chi_below": float, "chi_above": float, "path": str}
_OUTPUT_KEYS = {"dir": str, "sample_stride": int}
_GENERAL_KEYS = {"preset": str}

_SECTIONS = {
    "general": _GENERAL_KEYS,
    "material": dict.fromkeys(_MATERIAL_KEYS, float),
    "domain": _DOMAIN_KEYS,
    "stepper": _STEPPER_KEYS,
    "initial": _INITIAL_KEYS,
    "output": _OUTPUT_KEYS,
}


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "uniform"
    theta0: float | None = None  # defaults to theta_gamma
    U0: float = 0.0
    chi0: float = 1.0
    interface: float | None = None
    chi_below: float = 1.0
    chi_above: float = 0.0
    path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    preset: str
    params: MaterialParams
    domain_spec: dict
    stepper: StepperConfig
    initial: InitialCondition
    output_dir: Path = Path("out")
    sample_stride: int = 100
    overrides: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def domain(self) -> ColumnDomain:
        spec = self.domain_spec
        a, b = spec["a"], spec["b"]
        if "area_bottom" in spec or "area_top" in spec:
            lo = spec.get("area_bottom", spec["area"])
            hi = spec.get("area_top", spec["area"])
            area = lambda z: lo + (hi - lo) * (z - a) / (b - a)  # noqa: E731
        else:
            area = spec["area"]
        return build_column(a, b, spec["n_cells"], area, spec.get("perimeter"))


def _convert(section: str, key: str, raw: str, kind, lineno: int | None):
    where = f"[{section}] {key}" + (f" (line {lineno})" if lineno else "")
    try:
        if kind is int:
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(raw)
        return raw.strip().strip('"').strip("'")
    except ValueError:
        raise ConfigError(f"{where}: expected {kind.__name__}, got {raw!r}") from None


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    """Best-effort map (section, key) -> 1-based line number for messages."""
    numbers: dict[tuple[str, str], int] = {}
    section = "general"
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
        elif "=" in stripped:
            numbers[(section, stripped.split("=", 1)[0].strip())] = i
    return numbers


def _read_sections(text: str) -> tuple[dict[str, dict[str, object]], dict]:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",),
        delimiters=("=",), strict=True, empty_lines_in_values=False,
    )
    parser.optionxform = str
    try:
        parser.read_string("[general]\n" + text)
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"syntax error on line {lineno - 1}: {line.strip()!r}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        lineno = getattr(exc, "lineno", None)
        where = f" on line {lineno - 1}" if lineno else ""
        raise ConfigError(f"duplicate entry{where}: {exc.message if hasattr(exc, 'message') else exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None

    numbers = _line_numbers(text)
    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]; valid: {', '.join(f'[{s}]' for s in _SECTIONS)}")
        allowed = _SECTIONS[section]
        values[section] = {}
        for key, raw in parser.items(section):
            lineno = numbers.get((section, key))
            if key not in allowed:
                where = f" (line {lineno})" if lineno else ""
                raise ConfigError(f"unknown key {key!r} in [{section}]{where}")
            if raw is None or raw == "":
                raise ConfigError(f"[{section}] {key} (line {lineno}): missing value")
            values[section][key] = _convert(section, key, raw, allowed[key], lineno)
    return values, numbers


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    """Parse and validate a configuration document.

    Relative paths (output directory, ``from_file`` snapshots) are resolved
    against ``base_dir``.
    """
    values, _ = _read_sections(text)
    general = values.get("general", {})
    name = general.get("preset", "normalized")
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")

    material = {_MATERIAL_KEYS[k]: v for k, v in values.get("material", {}).items()}
    try:
        params, domain_defaults = preset(name, **material)
    except ModelError as exc:
        raise ConfigError(f"[material] {exc}") from None

    domain_spec = dict(domain_defaults)
    domain_spec.update(values.get("domain", {}))
    base_dir = Path(base_dir)
    cfg_stepper = values.get("stepper", {})
    try:
        stepper = StepperConfig(**cfg_stepper)
        stepper.check_for(params)
    except ModelError as exc:
        raise ConfigError(f"[stepper] {exc}") from None
    except TypeError as exc:  # pragma: no cover - keys are prefiltered
        raise ConfigError(f"[stepper] {exc}") from None

    initial = InitialCondition(**values.get("initial", {}))
    out = values.get("output", {})
    sample_stride = out.get("sample_stride", 100)
    if sample_stride < 1:
        raise ConfigError("[output] sample_stride must be >= 1")

    cfg = RunConfig(
        preset=name,
        params=params,
        domain_spec=domain_spec,
        stepper=stepper,
        initial=initial,
        output_dir=base_dir / out.get("dir", "out"),
        sample_stride=sample_stride,
        overrides={s: dict(v) for s, v in values.items() if s != "general"},
        base_dir=base_dir,
    )
    _validate_initial(cfg)
    try:
        cfg.domain()
    except ModelError as exc:
        raise ConfigError(f"[domain] {exc}") from None
    return cfg


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


def _validate_initial(cfg: RunConfig) -> None:
    ic = cfg.initial
    if ic.kind not in INITIAL_KINDS:
        raise ConfigError(f"[initial] kind must be one of {', '.join(INITIAL_KINDS)}, got {ic.kind!r}")
    if ic.theta0 is not None and not (math.isfinite(ic.theta0) and ic.theta0 > 0):
        raise ConfigError(f"[initial] theta0 must be positive, got {ic.theta0}")
    for name in ("chi0", "chi_below", "chi_above"):
        value = getattr(ic, name)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"[initial] {name} must lie in [0, 1], got {value}")
    if ic.kind == "layered" and ic.interface is None:
        raise ConfigError("[initial] layered initial condition needs 'interface'")
    if ic.kind == "from_file" and not ic.path:
        raise ConfigError("[initial] from_file initial condition needs 'path'")
    if ic.kind == "equilibrium" and cfg.params.g == 0:
        raise ConfigError("[initial] equilibrium initial condition needs g > 0 (unique equilibrium)")


def _zero_mean(U: np.ndarray, dom: ColumnDomain) -> np.ndarray:
    mean = dom.mean(U)
    scale = max(float(np.max(np.abs(U))), 1e-300)
    if abs(mean) <= 1e-12 * scale:
        return U
    if abs(mean) > 1e-8 * scale:
        log.warning("initial U has nonzero mean %.3e; subtracting it", mean)
    return U - mean


def build_initial_state(cfg: RunConfig, dom: ColumnDomain | None = None) -> StateField:
    """Materialize the configured initial condition on the configured grid."""
    from .csvio import read_snapshot  # local import: csvio depends on this module's error type
    from .equilibrium import collocated_equilibrium

    dom = dom or cfg.domain()
    p, ic = cfg.params, cfg.initial
    n = dom.n_cells
    theta0 = p.theta_gamma if ic.theta0 is None else ic.theta0
    if ic.kind == "uniform":
        state = StateField(np.full(n, theta0), np.full(n, ic.U0), np.full(n, ic.chi0))
    elif ic.kind == "layered":
        below = np.clip((ic.interface - dom.edges[:-1]) / dom.dz, 0.0, 1.0)
        # edges are computed, so an interface on an edge can land 1 ulp off
        snap = np.abs(below - np.round(below)) <= 1e-9
        below[snap] = np.round(below[snap])
        chi = ic.chi_above + (ic.chi_below - ic.chi_above) * below
        state = StateField(np.full(n, theta0), np.full(n, ic.U0), chi)
    elif ic.kind == "equilibrium":
        eq = collocated_equilibrium(p, dom)
        state = StateField(np.full(n, p.theta_gamma), eq.U_inf.copy(), eq.chi_inf.copy())
    else:
        path = Path(ic.path)
        if not path.is_absolute():
            path = cfg.base_dir / path
        z, theta, U, chi = read_snapshot(path)
        if z.shape != dom.z_centers.shape or not np.allclose(z, dom.z_centers, rtol=0, atol=1e-12 * dom.ell):
            raise ConfigError(
                f"[initial] snapshot {path} has {z.size} cells that do not match the configured grid ({n} cells)"
            )
        state = StateField(theta, U, chi)
    state = StateField(state.theta, _zero_mean(state.U, dom), state.chi)
    try:
        state.check(dom)
    except ModelError as exc:
        raise ConfigError(f"[initial] {exc}") from None
    return state

