"""Balance-law audits and long-time metrics on sampled trajectories.

All boundary quantities use the exchange conductances the stepper actually
applies, and gradients are face differences, so the balances close at the
discrete level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core_model import ColumnDomain, MaterialParams, ModelError, StateField
from .equilibrium import EquilibriumSolution
from .evolution import Sample, column_operators
from .thermo import extended_energy, total_energy, total_entropy

__all__ = [
    "DiagnosticsRecord",
    "EnergyBalance",
    "EntropyBalance",
    "LyapunovReport",
    "StationarityMetrics",
    "BoundsReport",
    "diagnostics_records",
    "energy_balance_residual",
    "entropy_production_series",
    "lyapunov_series",
    "stationarity_metrics",
    "bounds_monitor",
    "gradient_norm_sq",
]


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    total_energy_ext: float
    boundary_energy_flux: float
    entropy_total: float
    entropy_production: float
    lyapunov: float
    rate_norms: tuple[float, float, float, float]  # theta_t, U_t, chi_t, grad theta
    boundary_defect: float
    interface_L1_weighted: float = math.nan


@dataclass(eq=False)
class EnergyBalance:
    times: np.ndarray  # interval end points
    residual: np.ndarray  # rate form, per interval
    flux: np.ndarray  # mean boundary supply over the interval
    relative: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


@dataclass(eq=False)
class EntropyBalance:
    times: np.ndarray
    production: np.ndarray  # D at each sample
    defect: np.ndarray  # per interval, rate form


@dataclass(eq=False)
class LyapunovReport:
    times: np.ndarray
    values: np.ndarray
    max_increase: float
    violations: np.ndarray  # interval indices exceeding the slack
    drop: float
    predicted_drop: float

    @property
    def monotone(self) -> bool:
        return self.violations.size == 0


@dataclass(frozen=True)
class StationarityMetrics:
    rate_norm_sq: float  # integral of U_t^2 + chi_t^2 + |grad theta|^2
    boundary_defect_sq: float  # boundary integral of h (theta - theta_gamma)^2
    theta_w12: float
    chi_L1: float
    U_L1: float
    U_inf_L1: float
    interface_L1_weighted: float
    theta_t_L2: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class BoundsReport:
    max_theta: float
    min_theta: float
    max_abs_U: float
    max_abs_U_t: float
    max_abs_chi_t: float
    theta_max_slope: float  # linear-fit slope of max theta over the final half
    bounded: bool


def _face_gradient_sq(theta: np.ndarray, dom: ColumnDomain) -> float:
    A = dom.area
    face_area = 2.0 * A[:-1] * A[1:] / (A[:-1] + A[1:])
    grad = np.diff(theta) / dom.dz
    return float(np.dot(face_area, grad * grad) * dom.dz)


def gradient_norm_sq(theta: np.ndarray, dom: ColumnDomain) -> float:
    """Discrete ``integral |grad theta|^2`` from face differences."""
    return _face_gradient_sq(theta, dom)


def _times(samples: Sequence[Sample]) -> np.ndarray:
    return np.array([s.t for s in samples])


def energy_balance_residual(samples: Sequence[Sample], p: MaterialParams, dom: ColumnDomain) -> EnergyBalance:
    """``d/dt (total energy) - boundary supply`` on each sampling interval."""
    t = _times(samples)
    E = np.array([total_energy(s.state(), p, dom) for s in samples])
    Q = np.array([s.heat_in for s in samples])
    dt = np.diff(t)
    if dt.size == 0:
        empty = np.zeros(0)
        return EnergyBalance(empty, empty, empty, empty)
    flux = np.diff(Q) / dt
    residual = np.diff(E) / dt - flux
    scale = max(float(np.max(np.abs(flux))), 1e-300)
    return EnergyBalance(t[1:], residual, flux, np.abs(residual) / scale)


def entropy_production_series(samples: Sequence[Sample], p: MaterialParams, dom: ColumnDomain) -> EntropyBalance:
    """Dissipation rate per sample and the defect of the entropy balance per interval."""
    t = _times(samples)
    production = np.array([s.entropy_production for s in samples])
    S = np.array([total_entropy(s.state(), p, dom) for s in samples])
    dt = np.diff(t)
    if dt.size == 0:
        return EntropyBalance(t, production, np.zeros(0))
    produced = np.diff([s.dissipation for s in samples])
    supplied = np.diff([s.entropy_inflow for s in samples])
    defect = (np.diff(S) - produced - supplied) / dt
    return EntropyBalance(t, production, defect)


def lyapunov_series(
    samples: Sequence[Sample],
    p: MaterialParams,
    dom: ColumnDomain,
    slack: float = 2.0,
    roundoff: float = 1e-13,
) -> LyapunovReport:
    """Extended energy along the samples and its monotonicity.

    An increase over an interval counts as a violation when it exceeds
    ``slack * theta_gamma`` times the dissipation integrated over that
    interval, plus ``roundoff`` relative to the functional's magnitude.
    """
    t = _times(samples)
    values = np.array([extended_energy(s.state(), p, dom) for s in samples])
    if values.size < 2:
        return LyapunovReport(t, values, 0.0, np.zeros(0, dtype=int), 0.0, 0.0)
    inc = np.diff(values)
    dissipated = np.diff([s.dissipation for s in samples])
    defect = np.diff([s.boundary_defect for s in samples])
    floor = roundoff * max(float(np.max(np.abs(values))), 1.0)
    allowed = slack * p.theta_gamma * dissipated + floor
    violations = np.flatnonzero(inc > allowed)
    predicted = p.theta_gamma * (samples[-1].dissipation - samples[0].dissipation) + (
        samples[-1].boundary_defect - samples[0].boundary_defect
    )
    return LyapunovReport(
        t, values, float(np.max(inc)), violations, float(values[0] - values[-1]), float(predicted)
    )


def _exchange_conductance(p: MaterialParams, dom: ColumnDomain) -> np.ndarray:
    return column_operators(p, dom).exchange


def stationarity_metrics(
    state: StateField,
    U_t: np.ndarray,
    chi_t: np.ndarray,
    p: MaterialParams,
    dom: ColumnDomain,
    eq: EquilibriumSolution,
    theta_t: np.ndarray | None = None,
) -> StationarityMetrics:
    """Distances of a state (and its rates) from the equilibrium ``eq``."""
    n = dom.n_cells
    if eq.chi_inf.shape != (n,) or state.theta.shape != (n,):
        raise ModelError(
            f"domain mismatch: state has {state.theta.shape[0]} cells, equilibrium "
            f"{eq.chi_inf.shape[0]}, domain {n}"
        )
    grad_sq = _face_gradient_sq(state.theta, dom)
    gap = state.theta - eq.theta_gamma
    H = _exchange_conductance(p, dom)
    weight = np.abs(eq.interface_height - dom.z_centers)
    return StationarityMetrics(
        rate_norm_sq=dom.integrate(U_t**2 + chi_t**2) + grad_sq,
        boundary_defect_sq=float(np.dot(H, gap * gap)),
        theta_w12=math.sqrt(dom.integrate(gap * gap) + grad_sq),
        chi_L1=dom.integrate(np.abs(state.chi - eq.chi_inf)),
        U_L1=dom.integrate(np.abs(state.U - eq.U_inf)),
        U_inf_L1=dom.integrate(np.abs(eq.U_inf)),
        interface_L1_weighted=dom.integrate(np.abs(eq.chi_inf - state.chi) * weight),
        theta_t_L2=0.0 if theta_t is None else math.sqrt(dom.integrate(theta_t**2)),
    )


def bounds_monitor(samples: Sequence[Sample], rel_slope_tol: float = 1e-8) -> BoundsReport:
    """Extremes over the trajectory and a trend test on the final half.

    The trajectory counts as bounded when the maximum temperature over the
    final half either has no upward trend or never exceeds the maximum
    reached in the first half (a recovery toward a bound is not growth).
    """
    if not samples:
        raise ModelError("empty trajectory")
    max_theta = np.array([s.theta.max() for s in samples])
    t = _times(samples)
    half = len(samples) // 2
    slope = 0.0
    if len(samples) - half >= 2 and t[-1] > t[half]:
        slope = float(np.polyfit(t[half:], max_theta[half:], 1)[0])
    scale = float(np.max(np.abs(max_theta)))
    early_peak = float(max_theta[: max(half, 1)].max())
    no_new_peak = float(max_theta[half:].max()) <= early_peak * (1.0 + 1e-12)
    return BoundsReport(
        max_theta=float(max_theta.max()),
        min_theta=float(min(s.theta.min() for s in samples)),
        max_abs_U=float(max(np.abs(s.U).max() for s in samples)),
        max_abs_U_t=float(max(np.abs(s.U_t).max() for s in samples)),
        max_abs_chi_t=float(max(np.abs(s.chi_t).max() for s in samples)),
        theta_max_slope=slope,
        bounded=slope <= rel_slope_tol * scale or no_new_peak,
    )


def diagnostics_records(
    samples: Sequence[Sample],
    p: MaterialParams,
    dom: ColumnDomain,
    eq: EquilibriumSolution | None = None,
) -> list[DiagnosticsRecord]:
    """One record per sample; ``theta_t`` is the backward difference between samples."""
    H = _exchange_conductance(p, dom)
    records = []
    prev = None
    for s in samples:
        state = s.state()
        if prev is not None and s.t > prev.t:
            theta_t = (s.theta - prev.theta) / (s.t - prev.t)
        else:
            theta_t = np.zeros_like(s.theta)
        gap = p.theta_gamma - s.theta
        weighted = math.nan
        if eq is not None:
            weighted = dom.integrate(np.abs(eq.chi_inf - s.chi) * np.abs(eq.interface_height - dom.z_centers))
        records.append(
            DiagnosticsRecord(
                t=s.t,
                total_energy_ext=total_energy(state, p, dom),
                boundary_energy_flux=float(np.dot(H, gap)),
                entropy_total=total_entropy(state, p, dom),
                entropy_production=s.entropy_production,
                lyapunov=extended_energy(state, p, dom),
                rate_norms=(
                    math.sqrt(dom.integrate(theta_t**2)),
                    math.sqrt(dom.integrate(s.U_t**2)),
                    math.sqrt(dom.integrate(s.chi_t**2)),
                    math.sqrt(_face_gradient_sq(s.theta, dom)),
                ),
                boundary_defect=float(np.dot(H, gap * gap)),
                interface_L1_weighted=weighted,
            )
        )
        prev = s
    return records
