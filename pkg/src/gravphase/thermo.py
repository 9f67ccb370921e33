"""Pointwise state functions: pressure, energy, entropy, free energy.

All densities are volumetric (per unit volume, i.e. multiplied by the mass
density) so that domain integrals need no extra factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_model import ColumnDomain, MaterialParams, ModelError, StateField

__all__ = [
    "ThermoFields",
    "mean_pressure_offset",
    "pressure_field",
    "energy_entropy_densities",
    "free_energy_density",
    "extended_energy",
    "total_energy",
    "total_entropy",
    "thermo_fields",
]


@dataclass(eq=False)
class ThermoFields:
    pressure: np.ndarray
    energy_density: np.ndarray
    entropy_density: np.ndarray
    free_energy_density: np.ndarray
    P_of_t: float


def _elastic_strain(U, chi, p: MaterialParams):
    return U - p.alpha * (1.0 - chi)


def _require_admissible(state: StateField) -> None:
    chi = np.asarray(state.chi)
    if np.any(chi < 0) or np.any(chi > 1):
        raise ModelError("liquid fraction outside [0, 1]: the indicator term is infinite")
    if np.any(np.asarray(state.theta) <= 0):
        raise ModelError("temperature must be positive")


def mean_pressure_offset(state: StateField, p: MaterialParams, dom: ColumnDomain) -> float:
    """The spatially constant part ``P(t)`` of the pressure, ``p = P - rho0 g x3``."""
    return (
        p.alpha * p.lam * dom.mean(1.0 - state.chi)
        + p.beta * dom.mean(state.theta - p.theta_c)
        + p.rho0 * p.g * dom.m
    )


def pressure_field(
    state: StateField,
    U_t: np.ndarray | float,
    p: MaterialParams,
    dom: ColumnDomain | None = None,
) -> np.ndarray:
    """Relative pressure per cell (difference to the standard pressure)."""
    return (
        -p.nu * np.asarray(U_t)
        - p.lam * _elastic_strain(state.U, state.chi, p)
        + p.beta * (state.theta - p.theta_c)
    )


def energy_entropy_densities(state: StateField, p: MaterialParams) -> tuple[np.ndarray, np.ndarray]:
    _require_admissible(state)
    eps = _elastic_strain(state.U, state.chi, p)
    energy = p.c * state.theta + 0.5 * p.lam * eps**2 + p.beta * p.theta_c * state.U + p.L * state.chi
    entropy = p.c * np.log(state.theta / p.theta_c) + (p.L / p.theta_c) * state.chi + p.beta * state.U
    return energy, entropy


def free_energy_density(state: StateField, p: MaterialParams) -> np.ndarray:
    _require_admissible(state)
    theta = state.theta
    eps = _elastic_strain(state.U, state.chi, p)
    return (
        p.c * theta * (1.0 - np.log(theta / p.theta_c))
        + 0.5 * p.lam * eps**2
        - p.beta * (theta - p.theta_c) * state.U
        + p.L * state.chi * (1.0 - theta / p.theta_c)
    )


def total_energy(state: StateField, p: MaterialParams, dom: ColumnDomain) -> float:
    """Internal energy plus gravitational potential of the volume change."""
    energy, _ = energy_entropy_densities(state, p)
    return dom.integrate(energy - p.rho0 * p.g * dom.z_centers * state.U)


def total_entropy(state: StateField, p: MaterialParams, dom: ColumnDomain) -> float:
    _, entropy = energy_entropy_densities(state, p)
    return dom.integrate(entropy)


def extended_energy(state: StateField, p: MaterialParams, dom: ColumnDomain) -> float:
    """Lyapunov functional: energy minus ``theta_gamma`` times entropy, plus gravity.

    Terms linear in ``U`` with constant coefficients are dropped since
    ``U`` has zero mean.
    """
    _require_admissible(state)
    theta, U, chi = state.theta, state.U, state.chi
    eps = _elastic_strain(U, chi, p)
    density = (
        p.c * theta
        + 0.5 * p.lam * eps**2
        + p.L * chi
        - p.rho0 * p.g * dom.z_centers * U
        - p.theta_gamma * (p.c * np.log(theta / p.theta_c) + (p.L / p.theta_c) * chi)
    )
    return dom.integrate(density)


def thermo_fields(
    state: StateField, p: MaterialParams, dom: ColumnDomain, U_t: np.ndarray | float = 0.0
) -> ThermoFields:
    energy, entropy = energy_entropy_densities(state, p)
    return ThermoFields(
        pressure=pressure_field(state, U_t, p, dom),
        energy_density=energy,
        entropy_density=entropy,
        free_energy_density=free_energy_density(state, p),
        P_of_t=mean_pressure_offset(state, p, dom),
    )
