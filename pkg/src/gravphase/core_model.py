"""Material constants, column geometry and the dynamical state.

The container is represented as a vertical column of horizontal slabs.
Every quantity the model needs from the 3D domain (its volume, the
volume-averaged height, the volume above a given level) is recovered
from the per-cell cross-section areas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

__all__ = [
    "ModelError",
    "MaterialParams",
    "DimensionlessGroups",
    "ColumnDomain",
    "StateField",
    "build_column",
    "derive_dimensionless",
    "solid_fraction_above",
    "preset",
    "PRESETS",
]


class ModelError(ValueError):
    """Invalid parameters, geometry or state."""


@dataclass(frozen=True)
class MaterialParams:
    """Volumetric material constants and boundary data (SI units).

    ``lam`` is the bulk modulus (``lambda`` is reserved in Python);
    ``L`` and ``c`` are volumetric, i.e. already multiplied by ``rho0``.
    """

    c: float
    kappa: float
    lam: float
    nu: float
    alpha: float
    beta: float
    gamma: float
    L: float
    rho0: float
    g: float
    theta_c: float
    theta_gamma: float
    h_bottom: float = 0.0
    h_top: float = 0.0
    h_lateral: float = 0.0

    def __post_init__(self) -> None:
        for name in ("c", "kappa", "lam", "nu", "alpha", "gamma", "L", "rho0", "theta_c", "theta_gamma"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"{name} must be strictly positive, got {value!r}")
        for name in ("beta", "g", "h_bottom", "h_top", "h_lateral"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ModelError(f"{name} must be nonnegative, got {value!r}")

    @property
    def zero_gravity(self) -> bool:
        return self.g == 0.0

    def with_(self, **changes: float) -> "MaterialParams":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class DimensionlessGroups:
    """``d`` compares elastic to latent energy, ``G0`` elastic to gravity forces."""

    d: float
    G0: float

    @property
    def zero_gravity(self) -> bool:
        return math.isinf(self.G0)


@dataclass(frozen=True, eq=False)
class ColumnDomain:
    a: float
    b: float
    n_cells: int
    z_centers: np.ndarray
    dz: float
    area: np.ndarray
    perimeter: np.ndarray
    volume_total: float
    m: float
    ell: float
    # volume above each cell edge, edges[0] = a ... edges[n] = b
    edges: np.ndarray = field(repr=False)
    volume_above_edge: np.ndarray = field(repr=False)

    @property
    def cell_volume(self) -> np.ndarray:
        return self.area * self.dz

    def mean(self, values: np.ndarray) -> float:
        """Volume-weighted mean of a per-cell field."""
        return float(np.dot(self.area, values) * self.dz / self.volume_total)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.area, values) * self.dz)

    def same_grid(self, other: "ColumnDomain") -> bool:
        return (
            self.n_cells == other.n_cells
            and self.a == other.a
            and self.b == other.b
            and np.array_equal(self.area, other.area)
        )


def build_column(
    a: float,
    b: float,
    n_cells: int,
    area_profile: Callable[[np.ndarray], np.ndarray] | float | np.ndarray = 1.0,
    perimeter_profile: Callable[[np.ndarray], np.ndarray] | float | np.ndarray | None = None,
) -> ColumnDomain:
    """Discretize the container ``a < x3 < b`` into ``n_cells`` uniform slabs.

    ``area_profile`` may be a callable of height, a constant, or an array of
    per-cell areas. The callable is sampled at cell centers (these define
    the slab areas) and at cell edges (to reject a pinched container). When
    no perimeter is given a circular cross-section is assumed.
    """
    if not (math.isfinite(a) and math.isfinite(b) and b > a):
        raise ModelError(f"need b > a, got a={a!r}, b={b!r}")
    if int(n_cells) != n_cells or n_cells < 2:
        raise ModelError(f"n_cells must be an integer >= 2, got {n_cells!r}")
    n_cells = int(n_cells)
    dz = (b - a) / n_cells
    edges = a + dz * np.arange(n_cells + 1)
    edges[-1] = b
    z = a + dz * (np.arange(n_cells) + 0.5)

    area = _sample(area_profile, z, "area")
    if callable(area_profile):
        edge_area = _sample(area_profile, edges, "area")
        bad = np.flatnonzero(~(edge_area > 0))
        if bad.size:
            raise ModelError(
                f"area vanishes at height {edges[bad[0]]:.6g}: the container must be connected"
            )
    bad = np.flatnonzero(~(area > 0) | ~np.isfinite(area))
    if bad.size:
        raise ModelError(
            f"area vanishes at height {z[bad[0]]:.6g}: the container must be connected"
        )

    if perimeter_profile is None:
        perimeter = 2.0 * np.sqrt(np.pi * area)
    else:
        perimeter = _sample(perimeter_profile, z, "perimeter")
        if np.any(perimeter < 0):
            raise ModelError("perimeter must be nonnegative")

    volumes = area * dz
    above = np.zeros(n_cells + 1)
    above[:-1] = np.cumsum(volumes[::-1])[::-1]
    volume_total = float(above[0])
    m = float(np.dot(volumes, z) / volume_total)
    return ColumnDomain(
        a=float(a),
        b=float(b),
        n_cells=n_cells,
        z_centers=z,
        dz=dz,
        area=area,
        perimeter=perimeter,
        volume_total=volume_total,
        m=m,
        ell=float(b - a),
        edges=edges,
        volume_above_edge=above,
    )


def _sample(profile, heights: np.ndarray, what: str) -> np.ndarray:
    if callable(profile):
        values = np.asarray(profile(heights), dtype=float)
        return np.broadcast_to(values, heights.shape).astype(float)
    values = np.asarray(profile, dtype=float)
    if values.ndim == 0:
        return np.full(heights.shape, float(values))
    if values.shape != heights.shape:
        raise ModelError(f"{what} array has shape {values.shape}, expected {heights.shape}")
    return values.copy()


def derive_dimensionless(p: MaterialParams, dom: ColumnDomain) -> DimensionlessGroups:
    d = p.alpha**2 * p.lam / p.L
    G0 = math.inf if p.g == 0 else p.alpha * p.lam / (p.rho0 * p.g * dom.ell)
    return DimensionlessGroups(d=d, G0=G0)


def solid_fraction_above(dom: ColumnDomain, r):
    """Fraction of the container volume lying above height ``r``.

    Exact for the piecewise-constant area profile, so the result is
    piecewise linear in ``r``. Accepts scalars or arrays.
    """
    frac = np.interp(r, dom.edges, dom.volume_above_edge / dom.volume_total)
    return float(frac) if np.ndim(frac) == 0 else frac


@dataclass(eq=False)
class StateField:
    """Per-cell temperature, relative volume increment and liquid fraction."""

    theta: np.ndarray
    U: np.ndarray
    chi: np.ndarray
    t: float = 0.0

    def copy(self) -> "StateField":
        return StateField(self.theta.copy(), self.U.copy(), self.chi.copy(), self.t)

    def check(self, dom: ColumnDomain, mean_tol: float = 1e-10) -> None:
        """Raise :class:`ModelError` unless the state is admissible on ``dom``."""
        n = dom.n_cells
        for name in ("theta", "U", "chi"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ModelError(f"{name} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} contains non-finite values")
        if np.any(self.theta <= 0):
            raise ModelError("temperature must be positive in every cell")
        if np.any(self.chi < 0) or np.any(self.chi > 1):
            raise ModelError("liquid fraction must lie in [0, 1]")
        scale = float(np.max(np.abs(self.U)))
        if abs(dom.mean(self.U)) > mean_tol * max(scale, 1e-300):
            raise ModelError("U must have zero volume-weighted mean")


# Handbook values for water; nu, gamma, beta are order-of-magnitude choices.
_WATER_RHO0 = 1000.0
_WATER_C0 = 4180.0
_WATER_L0 = 3.34e5
_WATER_SOUND = 1482.0

PRESETS: dict[str, dict] = {
    "normalized": {
        "params": dict(
            c=1.0, kappa=1.0, lam=1.0, nu=1.0, alpha=1.0, beta=1.0, gamma=1.0,
            L=2.0, rho0=1.0, g=1.0, theta_c=1.0, theta_gamma=1.0,
            h_bottom=1.0, h_top=1.0, h_lateral=0.0,
        ),
        "domain": dict(a=0.0, b=1.0, n_cells=64, area=1.0),
    },
    "water": {
        "params": dict(
            c=_WATER_RHO0 * _WATER_C0,
            kappa=0.6,
            lam=_WATER_RHO0 * _WATER_SOUND**2,
            nu=1.0e3,
            alpha=0.09,
            beta=1.0e5,
            gamma=1.0e7,
            L=_WATER_RHO0 * _WATER_L0,
            rho0=_WATER_RHO0,
            g=9.81,
            theta_c=273.15,
            theta_gamma=274.15,
            h_bottom=10.0,
            h_top=10.0,
            h_lateral=0.0,
        ),
        "domain": dict(a=0.0, b=0.5, n_cells=64, area=0.01),
    },
}


def preset(name: str, **overrides: float) -> tuple[MaterialParams, dict]:
    """Return ``(params, domain_defaults)`` for a named preset.

    ``domain_defaults`` holds keyword arguments for :func:`build_column`
    (``a``, ``b``, ``n_cells``, ``area``).
    """
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")
    entry = PRESETS[name]
    values = dict(entry["params"])
    unknown = set(overrides) - set(values)
    if unknown:
        raise ModelError(f"unknown material parameter(s): {', '.join(sorted(unknown))}")
    values.update(overrides)
    return MaterialParams(**values), dict(entry["domain"])
