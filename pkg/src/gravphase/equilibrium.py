"""Stationary states of the column.

With gravity the equilibrium is fixed by one scalar ``Z`` solving
``Z = K + F(Z)`` where ``K = (theta_gamma/theta_c - 1)/d`` and ``F`` is the
solid volume fraction above the interface height ``m + G0*ell*Z``. ``F`` is
nonincreasing, so the residual is strictly increasing and bisection on
``[K, K + 1]`` brackets the unique root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_model import (
    ColumnDomain,
    MaterialParams,
    ModelError,
    derive_dimensionless,
    solid_fraction_above,
)

__all__ = [
    "PURE_SOLID",
    "PURE_LIQUID",
    "INTERFACE",
    "EquilibriumSolution",
    "Classification",
    "ZeroGravityEquilibria",
    "bisect_increasing",
    "offset_K",
    "z_residual",
    "solve_Z",
    "classify",
    "equilibrium_fields",
    "solve_equilibrium",
    "collocated_equilibrium",
    "fields_from_chi",
    "latent_heat_beta",
    "clausius_clapeyron_residual",
    "clausius_clapeyron_ratio",
    "zero_gravity_equilibrium_set",
]

PURE_SOLID = "pure_solid"
PURE_LIQUID = "pure_liquid"
INTERFACE = "interface"


@dataclass(eq=False)
class EquilibriumSolution:
    Z: float
    case_tag: str
    interface_height: float
    chi_inf: np.ndarray
    U_inf: np.ndarray
    p_inf: np.ndarray
    solid_fraction: float
    theta_gamma: float
    theta_lower: float = math.nan
    theta_upper: float = math.nan


@dataclass(frozen=True)
class Classification:
    case_tag: str
    theta_lower: float
    theta_upper: float


@dataclass(eq=False)
class ZeroGravityEquilibria:
    theta_interval: tuple[float, float]
    regime: str  # pure_solid, pure_liquid or "degenerate"
    unique: bool
    solid_fraction: float
    witnesses: list[np.ndarray] = field(default_factory=list)


def bisect_increasing(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    max_iter: int = 200,
    stop: Callable[[float, float], bool] | None = None,
) -> tuple[float, float]:
    """Shrink ``[lo, hi]`` around the root of a nondecreasing function.

    Requires ``func(lo) <= 0 <= func(hi)``. Stops when the bracket is
    narrower than ``tol`` (absolute, relative to ``max(1, |lo|)``) or when
    ``stop(lo, hi)`` returns true.
    """
    f_lo, f_hi = func(lo), func(hi)
    if f_lo > 0 or f_hi < 0:
        raise ModelError(f"root not bracketed: f({lo})={f_lo}, f({hi})={f_hi}")
    for _ in range(max_iter):
        if hi - lo <= tol * max(1.0, abs(lo)) or (stop is not None and stop(lo, hi)):
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if func(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo, hi


def offset_K(p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None = None) -> float:
    theta_gamma = p.theta_gamma if theta_gamma is None else theta_gamma
    d = derive_dimensionless(p, dom).d
    return (theta_gamma / p.theta_c - 1.0) / d


def _require_gravity(p: MaterialParams) -> None:
    if p.g == 0:
        raise ModelError(
            "zero gravity: equilibria are not unique; use zero_gravity_equilibrium_set"
        )


def _interface_height(p: MaterialParams, dom: ColumnDomain, Z):
    G0 = derive_dimensionless(p, dom).G0
    return dom.m + G0 * dom.ell * Z


def z_residual(p: MaterialParams, dom: ColumnDomain, theta_gamma: float, Z):
    """``Z - K - F(Z)``; vectorized over ``Z``."""
    _require_gravity(p)
    K = offset_K(p, dom, theta_gamma)
    return Z - K - solid_fraction_above(dom, _interface_height(p, dom, Z))


def solve_Z(p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None = None, tol: float = 1e-12) -> float:
    """Unique root of ``Z = K + F(Z)`` (gravity required)."""
    _require_gravity(p)
    theta_gamma = p.theta_gamma if theta_gamma is None else theta_gamma
    K = offset_K(p, dom, theta_gamma)
    G0ell = derive_dimensionless(p, dom).G0 * dom.ell

    def F(Z: float) -> float:
        return solid_fraction_above(dom, dom.m + G0ell * Z)

    # pure phases are returned exactly so threshold ties classify cleanly
    if F(K) == 0.0:
        return K
    if F(K + 1.0) == 1.0:
        return K + 1.0

    def resid(Z: float) -> float:
        return Z - K - F(Z)

    def same_cell(lo: float, hi: float) -> bool:
        i_lo = np.searchsorted(dom.edges, dom.m + G0ell * lo, side="right")
        i_hi = np.searchsorted(dom.edges, dom.m + G0ell * hi, side="left")
        return i_lo == i_hi

    lo, hi = bisect_increasing(resid, K, K + 1.0, tol=tol, stop=same_cell)
    r_lo, r_hi = resid(lo), resid(hi)
    if r_hi == r_lo:
        return lo if abs(r_lo) <= abs(r_hi) else hi
    # residual is affine inside one cell: finish with an exact linear solve
    Z = lo - r_lo * (hi - lo) / (r_hi - r_lo)
    return min(max(Z, lo), hi)


def classify(
    p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None, Z: float
) -> Classification:
    """Case tag for ``Z`` and the two temperatures bounding the interface case.

    Ties at a threshold resolve to the pure phase.
    """
    _require_gravity(p)
    groups = derive_dimensionless(p, dom)
    G0ell = groups.G0 * dom.ell
    lower = p.theta_c * (1.0 - groups.d * (1.0 + (dom.m - dom.a) / G0ell))
    upper = p.theta_c * (1.0 + groups.d * (dom.b - dom.m) / G0ell)
    if Z <= (dom.a - dom.m) / G0ell:
        tag = PURE_SOLID
    elif Z >= (dom.b - dom.m) / G0ell:
        tag = PURE_LIQUID
    else:
        tag = INTERFACE
    return Classification(tag, lower, upper)


def fields_from_chi(
    p: MaterialParams, dom: ColumnDomain, chi: np.ndarray, theta_gamma: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Stationary ``U`` and pressure belonging to a phase field at ``theta_gamma``."""
    theta_gamma = p.theta_gamma if theta_gamma is None else theta_gamma
    F = dom.mean(1.0 - chi)
    z = dom.z_centers
    U = p.alpha * (1.0 - chi) - p.alpha * F + (p.rho0 * p.g / p.lam) * (z - dom.m)
    # exact zero mean up to roundoff; remove the residue
    U = U - dom.mean(U)
    pressure = (
        p.alpha * p.lam * F
        + p.beta * (theta_gamma - p.theta_c)
        + p.rho0 * p.g * dom.m
        - p.rho0 * p.g * z
    )
    return U, pressure


def equilibrium_fields(
    p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None, Z: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sharp phase profile at ``m + G0*ell*Z`` with the cut cell partially liquid."""
    h = _interface_height(p, dom, Z)
    chi = np.clip((h - dom.edges[:-1]) / dom.dz, 0.0, 1.0)
    U, pressure = fields_from_chi(p, dom, chi, theta_gamma)
    return chi, U, pressure


def solve_equilibrium(
    p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None = None
) -> EquilibriumSolution:
    theta_gamma = p.theta_gamma if theta_gamma is None else theta_gamma
    Z = solve_Z(p, dom, theta_gamma)
    cls = classify(p, dom, theta_gamma, Z)
    chi, U, pressure = equilibrium_fields(p, dom, theta_gamma, Z)
    return EquilibriumSolution(
        Z=Z,
        case_tag=cls.case_tag,
        interface_height=float(_interface_height(p, dom, Z)),
        chi_inf=chi,
        U_inf=U,
        p_inf=pressure,
        solid_fraction=solid_fraction_above(dom, _interface_height(p, dom, Z)),
        theta_gamma=theta_gamma,
        theta_lower=cls.theta_lower,
        theta_upper=cls.theta_upper,
    )


def collocated_equilibrium(
    p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None = None
) -> EquilibriumSolution:
    """Equilibrium of the cell-centred discretization used by the time stepper.

    The phase inclusion is collocated at cell centres, so the discrete solid
    fraction is a staircase in the interface height. The generalized root
    either falls between two centres (all cells pure) or exactly on a centre,
    in which case that one cell carries the fractional value that closes the
    mean. These states are exact fixed points of
    :func:`gravphase.evolution.step_coupled`.
    """
    _require_gravity(p)
    theta_gamma = p.theta_gamma if theta_gamma is None else theta_gamma
    K = offset_K(p, dom, theta_gamma)
    G0ell = derive_dimensionless(p, dom).G0 * dom.ell
    n = dom.n_cells
    V = dom.volume_total
    Zc = (dom.z_centers - dom.m) / G0ell
    # F on the open interval between centres j-1 and j: cells j..n-1 solid
    F_int = dom.volume_above_edge / V  # length n + 1, F_int[n] = 0
    chi = np.ones(n)
    Z = None
    for j in range(n + 1):
        cand = K + F_int[j]
        left = -math.inf if j == 0 else Zc[j - 1]
        right = math.inf if j == n else Zc[j]
        if left < cand < right:
            Z = cand
            chi[j:] = 0.0
            break
        if j < n and K + F_int[j + 1] <= Zc[j] <= K + F_int[j]:
            Z = float(Zc[j])
            chi[j + 1:] = 0.0
            solid_j = (Z - K - F_int[j + 1]) * V / dom.cell_volume[j]
            chi[j] = 1.0 - min(max(solid_j, 0.0), 1.0)
            break
    if Z is None:  # pragma: no cover - monotonicity guarantees a root
        raise ModelError("collocated equilibrium not found")
    cls = classify(p, dom, theta_gamma, Z)
    U, pressure = fields_from_chi(p, dom, chi, theta_gamma)
    return EquilibriumSolution(
        Z=Z,
        case_tag=cls.case_tag,
        interface_height=float(dom.m + G0ell * Z),
        chi_inf=chi,
        U_inf=U,
        p_inf=pressure,
        solid_fraction=dom.mean(1.0 - chi),
        theta_gamma=theta_gamma,
        theta_lower=cls.theta_lower,
        theta_upper=cls.theta_upper,
    )


def latent_heat_beta(p: MaterialParams) -> float:
    """Specific latent heat corrected for thermal expansion work."""
    return p.L / p.rho0 - p.alpha * p.beta * p.theta_c / p.rho0


def _equilibrium_pressure_at(p: MaterialParams, dom: ColumnDomain, sol: EquilibriumSolution, x3: float) -> float:
    return (
        p.alpha * p.lam * sol.solid_fraction
        + p.beta * (sol.theta_gamma - p.theta_c)
        + p.rho0 * p.g * (dom.m - x3)
    )


def clausius_clapeyron_residual(
    p: MaterialParams,
    dom: ColumnDomain,
    sol: EquilibriumSolution,
    pressure: Callable[[float], float] | None = None,
) -> float:
    """Relative residual of the Clausius-Clapeyron relation at the interface.

    Uses the product form ``p(x*) alpha theta_c / rho0 + L_beta (theta_gamma - theta_c)``
    divided by ``L_beta theta_c``, which stays defined at ``theta_gamma == theta_c``.
    ``pressure`` overrides the equilibrium pressure profile, e.g. with a
    reference computed from the exact container geometry.
    """
    if sol.case_tag != INTERFACE:
        raise ModelError(f"no phase interface in case {sol.case_tag!r}")
    x_star = sol.interface_height
    p_star = pressure(x_star) if pressure is not None else _equilibrium_pressure_at(p, dom, sol, x_star)
    L_beta = latent_heat_beta(p)
    scale = L_beta if L_beta != 0 else p.L / p.rho0
    r = p_star * p.alpha * p.theta_c / p.rho0 + L_beta * (sol.theta_gamma - p.theta_c)
    return r / (scale * p.theta_c)


def clausius_clapeyron_ratio(p: MaterialParams, dom: ColumnDomain, sol: EquilibriumSolution) -> float:
    """``p(x*)/(theta_gamma - theta_c)``; NaN when the ratio is 0/0."""
    if sol.case_tag != INTERFACE:
        raise ModelError(f"no phase interface in case {sol.case_tag!r}")
    gap = sol.theta_gamma - p.theta_c
    if gap == 0:
        return math.nan
    return _equilibrium_pressure_at(p, dom, sol, sol.interface_height) / gap


def zero_gravity_equilibrium_set(
    p: MaterialParams, dom: ColumnDomain, theta_gamma: float | None = None
) -> ZeroGravityEquilibria:
    """Admissible equilibria without gravity.

    Stationarity requires ``K + F`` to lie in the subdifferential of the
    indicator at every point. For ``-1 < K < 0`` that forces ``K + F = 0``
    and any phase field with solid fraction ``F = -K`` is an equilibrium.
    """
    if p.g != 0:
        raise ModelError("zero_gravity_equilibrium_set requires g = 0")
    theta_gamma = p.theta_gamma if theta_gamma is None else theta_gamma
    d = derive_dimensionless(p, dom).d
    interval = (p.theta_c * (1.0 - d), p.theta_c)
    K = offset_K(p, dom, theta_gamma)
    n = dom.n_cells
    if K >= 0:
        return ZeroGravityEquilibria(interval, PURE_LIQUID, True, 0.0, [np.ones(n)])
    if K <= -1:
        return ZeroGravityEquilibria(interval, PURE_SOLID, True, 1.0, [np.zeros(n)])

    F_star = -K
    # layered: solid at the bottom, liquid on top (gravitationally inverted)
    target = 1.0 - F_star  # liquid fraction above the cut
    lo, hi = bisect_increasing(
        lambda r: target - solid_fraction_above(dom, r), dom.a, dom.b, tol=1e-15
    )
    r = 0.5 * (lo + hi)
    layered = np.clip((dom.edges[1:] - r) / dom.dz, 0.0, 1.0)
    cut = int(np.clip(np.searchsorted(dom.edges, r) - 1, 0, n - 1))
    deficit = (1.0 - F_star) - dom.mean(layered)
    layered[cut] = min(max(layered[cut] + deficit * dom.volume_total / dom.cell_volume[cut], 0.0), 1.0)

    base = 1.0 - F_star
    wiggle = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    wiggle -= dom.mean(wiggle)
    amp = 0.9 * min(base, 1.0 - base) / np.max(np.abs(wiggle))
    interleaved = base + amp * wiggle
    return ZeroGravityEquilibria(interval, "degenerate", False, F_star, [layered, interleaved])
