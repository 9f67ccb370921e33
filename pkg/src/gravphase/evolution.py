"""Time integration of the coupled temperature / volume / phase system.

One coupled step is split as phase -> volume -> temperature:

1. the phase inclusion is advanced by backward Euler with the volume
   increment and temperature lagged; the subdifferential of the indicator
   is applied exactly by clamping the implicit linear update to [0, 1];
2. the volume equation is diagonal once the spatial mean is known and is
   solved exactly by backward Euler;
3. the heat equation is backward Euler in the diffusion, with Robin ends
   and optional lateral exchange, and sources built from the rates of
   steps 1-2.

The phase part of the heat source is evaluated with the strain at the
midpoint phase value. With that choice the discrete total energy changes
exactly by the boundary supply, except for the expansion term
``-beta*theta*U_t``, which multiplies the new temperature whenever it is a
sink (positivity) and leaves an O(dt^2) per-step defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_model import ColumnDomain, MaterialParams, ModelError, StateField
from . import _kernel
from .tridiag import solve_tridiagonal

__all__ = [
    "COUPLED",
    "PICARD",
    "LOWER",
    "FREE",
    "UPPER",
    "NumericalError",
    "StepRejected",
    "PicardNotConverged",
    "StepperConfig",
    "StepReport",
    "ColumnOperators",
    "column_operators",
    "cutoff",
    "update_U",
    "chi_resolvent",
    "heat_source",
    "source_forms",
    "update_theta",
    "step_coupled",
    "gradient_flow_energy",
    "gradient_flow_step",
    "PicardResult",
    "picard_solve",
    "Sample",
    "RunResult",
    "run",
]

COUPLED = "coupled_semi_implicit"
PICARD = "picard"

LOWER, FREE, UPPER = -1, 0, 1


class NumericalError(RuntimeError):
    """A step or solver could not produce an admissible result."""


class StepRejected(NumericalError):
    pass


class PicardNotConverged(NumericalError):
    def __init__(self, message: str, factors: list[float]):
        super().__init__(message)
        self.factors = factors


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = COUPLED
    R_cutoff: float = math.inf
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    picard_window: float = 0.5
    linear_tol: float = 1e-10

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ModelError(f"dt must be positive, got {self.dt!r}")
        if not self.t_end >= 0:
            raise ModelError(f"t_end must be nonnegative, got {self.t_end!r}")
        if self.scheme not in (COUPLED, PICARD):
            raise ModelError(f"scheme must be {COUPLED!r} or {PICARD!r}, got {self.scheme!r}")
        if not self.picard_tol > 0:
            raise ModelError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ModelError("picard_max_iter must be at least 1")
        if not self.picard_window > 0:
            raise ModelError("picard_window must be positive")
        if not self.linear_tol > 0:
            raise ModelError("linear_tol must be positive")
        if not self.R_cutoff > 0:
            raise ModelError("R_cutoff must be positive")

    def check_for(self, p: MaterialParams) -> None:
        if self.scheme == PICARD and not self.R_cutoff > p.theta_gamma:
            raise ModelError(
                f"R_cutoff ({self.R_cutoff}) must exceed theta_gamma ({p.theta_gamma}) for picard"
            )


@dataclass(eq=False)
class StepReport:
    U_t: np.ndarray
    chi_t: np.ndarray
    active_set: np.ndarray
    xi: np.ndarray
    picard_iters: int
    max_theta: float
    min_theta: float
    dt: float = 0.0
    heat_in: float = 0.0
    entropy_production: float = 0.0
    boundary_defect: float = 0.0
    entropy_inflow: float = 0.0
    linear_residual: float = 0.0


@dataclass(frozen=True, eq=False)
class ColumnOperators:
    """Quantities of the spatial discretization that do not change in time."""

    vol: np.ndarray
    z_rel: np.ndarray
    face_cond: np.ndarray  # kappa * A_face / dz, interior faces
    exchange: np.ndarray  # boundary conductance per cell [W/K]
    stiffness_diag: np.ndarray
    volume_total: float


def column_operators(p: MaterialParams, dom: ColumnDomain) -> ColumnOperators:
    A = dom.area
    face_area = 2.0 * A[:-1] * A[1:] / (A[:-1] + A[1:])
    face_cond = p.kappa * face_area / dom.dz
    exchange = p.h_lateral * dom.perimeter * dom.dz
    # Robin ends: half-cell conduction in series with the transfer coefficient
    if p.h_bottom > 0:
        exchange[0] += A[0] / (1.0 / p.h_bottom + 0.5 * dom.dz / p.kappa)
    if p.h_top > 0:
        exchange[-1] += A[-1] / (1.0 / p.h_top + 0.5 * dom.dz / p.kappa)
    diag = exchange.copy()
    diag[:-1] += face_cond
    diag[1:] += face_cond
    return ColumnOperators(
        vol=dom.cell_volume,
        z_rel=dom.z_centers - dom.m,
        face_cond=face_cond,
        exchange=exchange,
        stiffness_diag=diag,
        volume_total=dom.volume_total,
    )


def cutoff(theta: np.ndarray, R: float) -> np.ndarray:
    """Truncation ``min(max(theta, 0), R)``."""
    return np.minimum(np.maximum(theta, 0.0), R)


def _mean(ops: ColumnOperators, values: np.ndarray) -> float:
    return float(np.dot(ops.vol, values)) / ops.volume_total


def update_U(
    state: StateField,
    chi_new: np.ndarray,
    theta_used: np.ndarray,
    dt: float,
    p: MaterialParams,
    dom: ColumnDomain,
    ops: ColumnOperators | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward Euler for ``nu U_t + lam U = rhs``; the right side has zero mean."""
    ops = ops or column_operators(p, dom)
    forcing = p.alpha * p.lam * (1.0 - chi_new) + p.beta * (theta_used - p.theta_c)
    rhs = forcing - _mean(ops, forcing) + p.rho0 * p.g * ops.z_rel
    w = p.nu / dt
    U_new = (w * state.U + rhs) / (w + p.lam)
    return U_new, (U_new - state.U) / dt


def chi_resolvent(
    chi_old: np.ndarray,
    U_used: np.ndarray,
    theta_used: np.ndarray,
    dt: float,
    p: MaterialParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backward Euler step of the phase inclusion with lagged ``U`` and ``theta``.

    Returns ``(chi_new, chi_t, active_set, xi)`` where ``xi`` is the element
    of the subdifferential of the indicator selected by the clamp.
    """
    k = p.alpha**2 * p.lam
    w = p.gamma / dt
    drive = p.alpha * p.lam * (U_used - p.alpha) + p.L * (1.0 - theta_used / p.theta_c)
    chi_free = (w * chi_old - drive) / (w + k)
    chi_new = np.clip(chi_free, 0.0, 1.0)
    active = np.zeros(chi_new.shape, dtype=np.int8)
    active[chi_free < 0.0] = LOWER
    active[chi_free > 1.0] = UPPER
    xi = (w + k) * (chi_free - chi_new)
    return chi_new, (chi_new - chi_old) / dt, active, xi


def heat_source(
    U_t: np.ndarray,
    chi_t: np.ndarray,
    U_mid: np.ndarray,
    chi_mid: np.ndarray,
    theta_old: np.ndarray,
    dt: float,
    p: MaterialParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Heat source split as ``explicit + implicit_coef * theta_new`` (per volume).

    ``U_mid``/``chi_mid`` are the arguments of the strain in the latent term
    (old ``U`` and the average of old and new ``chi``). ``theta_old`` enters
    the expansion term where it is a source.
    """
    eps_mid = U_mid - p.alpha * (1.0 - chi_mid)
    explicit = (p.nu + 0.5 * p.lam * dt) * U_t**2 - (p.alpha * p.lam * eps_mid + p.L) * chi_t
    expansion = p.beta * U_t
    sink = expansion > 0
    implicit = np.where(sink, -expansion, 0.0)
    explicit = explicit - np.where(sink, 0.0, expansion * theta_old)
    return explicit, implicit


def source_forms(
    U_t: np.ndarray,
    chi_t: np.ndarray,
    xi: np.ndarray,
    U_old: np.ndarray,
    chi_old: np.ndarray,
    theta_old: np.ndarray,
    dt: float,
    p: MaterialParams,
) -> tuple[np.ndarray, np.ndarray]:
    """The heat source written two ways from the same discrete rates.

    The first form uses the strain; the second eliminates it with the
    discrete phase inclusion and exposes the dissipative structure
    ``gamma chi_t^2 - (L/theta_c) theta chi_t`` plus the multiplier work
    ``xi chi_t`` and the backward-Euler dissipation. Both use ``theta_old``
    in the expansion term. They agree to roundoff.
    """
    chi_new = chi_old + dt * chi_t
    chi_mid = 0.5 * (chi_old + chi_new)
    eps_mid = U_old - p.alpha * (1.0 - chi_mid)
    common = (p.nu + 0.5 * p.lam * dt) * U_t**2 - p.beta * theta_old * U_t
    first = common - (p.alpha * p.lam * eps_mid + p.L) * chi_t
    second = (
        common
        + p.gamma * chi_t**2
        - (p.L / p.theta_c) * theta_old * chi_t
        + xi * chi_t
        + 0.5 * p.alpha**2 * p.lam * dt * chi_t**2
    )
    return first, second


def update_theta(
    state: StateField,
    U_t: np.ndarray,
    chi_t: np.ndarray,
    U_mid: np.ndarray,
    chi_mid: np.ndarray,
    dt: float,
    p: MaterialParams,
    dom: ColumnDomain,
    cfg: StepperConfig | None = None,
    ops: ColumnOperators | None = None,
    source: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, float]:
    """Implicit heat step. Returns ``(theta_new, relative linear residual)``.

    Raises :class:`StepRejected` if the new temperature is not positive.
    """
    ops = ops or column_operators(p, dom)
    linear_tol = cfg.linear_tol if cfg is not None else 1e-10
    if source is None:
        source = heat_source(U_t, chi_t, U_mid, chi_mid, state.theta, dt, p)
    explicit, implicit = source
    mass = p.c * ops.vol / dt
    diag = mass + ops.stiffness_diag - ops.vol * implicit
    off = -ops.face_cond
    rhs = mass * state.theta + ops.vol * explicit + ops.exchange * p.theta_gamma
    theta_new = solve_tridiagonal(off, diag, off, rhs)

    resid = diag * theta_new - rhs
    resid[:-1] += off * theta_new[1:]
    resid[1:] += off * theta_new[:-1]
    rel = float(np.max(np.abs(resid)) / max(np.max(np.abs(rhs)), 1e-300))
    if not np.all(np.isfinite(theta_new)) or rel > linear_tol:
        raise StepRejected(f"heat solve failed (relative residual {rel:.3e})")
    if np.any(theta_new <= 0):
        where = int(np.argmin(theta_new))
        raise StepRejected(
            f"temperature lost positivity in cell {where} (theta={theta_new[where]:.4g}) "
            f"at t={state.t + dt:.6g}; reduce dt"
        )
    return theta_new, rel


def _balance_terms(theta: np.ndarray, U_t: np.ndarray, chi_t: np.ndarray, p: MaterialParams, ops: ColumnOperators):
    gap = p.theta_gamma - theta
    heat_in = float(np.dot(ops.exchange, gap))
    grad = np.diff(theta)
    dissipation = float(np.dot(ops.face_cond, grad * grad / (theta[:-1] * theta[1:])))
    dissipation += float(np.dot(ops.vol, (p.gamma * chi_t**2 + p.nu * U_t**2) / theta))
    boundary_defect = float(np.dot(ops.exchange, gap * gap / theta))
    entropy_inflow = float(np.dot(ops.exchange, gap / theta))
    return heat_in, dissipation, boundary_defect, entropy_inflow


def _consts(p: MaterialParams) -> np.ndarray:
    return np.array(
        [p.alpha, p.lam, p.nu, p.beta, p.gamma, p.L, p.theta_c, p.theta_gamma, p.rho0 * p.g, p.c]
    )


def _advance(
    state: StateField,
    dt: float,
    p: MaterialParams,
    ops: ColumnOperators,
    linear_tol: float,
    theta_lag: np.ndarray,
    theta_next: np.ndarray | None,
    consts: np.ndarray | None = None,
) -> tuple[StateField, StepReport]:
    """One step through the fused kernel.

    With ``theta_next`` given, every temperature in the sources is
    prescribed (the frozen-temperature map of the Picard construction);
    otherwise the expansion sink multiplies the new temperature.
    """
    consts = _consts(p) if consts is None else consts
    use_next = theta_next is not None
    out = _kernel.fused_step(
        state.theta, state.U, state.chi, theta_lag,
        theta_next if use_next else theta_lag, use_next, dt, consts,
        ops.vol, ops.z_rel, ops.face_cond, ops.exchange, ops.stiffness_diag, ops.volume_total,
    )
    theta_new, U_new, chi_new, U_t, chi_t, active, xi, sc, status = out
    t_new = state.t + dt
    if status == _kernel.NONFINITE or sc[_kernel.RESIDUAL] > linear_tol:
        raise StepRejected(
            f"heat solve failed at t={t_new:.6g} (relative residual {sc[_kernel.RESIDUAL]:.3e}); reduce dt"
        )
    if status == _kernel.NONPOSITIVE:
        cell = int(sc[_kernel.BAD_CELL])
        raise StepRejected(
            f"temperature lost positivity in cell {cell} (theta={theta_new[cell]:.4g}) "
            f"at t={t_new:.6g}; reduce dt"
        )
    report = StepReport(
        U_t=U_t,
        chi_t=chi_t,
        active_set=active,
        xi=xi,
        picard_iters=0,
        max_theta=float(sc[_kernel.MAX_T]),
        min_theta=float(sc[_kernel.MIN_T]),
        dt=dt,
        heat_in=float(sc[_kernel.HEAT_IN]),
        entropy_production=float(sc[_kernel.DISSIPATION]),
        boundary_defect=float(sc[_kernel.DEFECT]),
        entropy_inflow=float(sc[_kernel.INFLOW]),
        linear_residual=float(sc[_kernel.RESIDUAL]),
    )
    return StateField(theta_new, U_new, chi_new, t_new), report


def step_coupled(
    state: StateField,
    dt: float,
    p: MaterialParams,
    dom: ColumnDomain,
    cfg: StepperConfig | None = None,
    ops: ColumnOperators | None = None,
) -> tuple[StateField, StepReport]:
    """One split step phase -> volume -> temperature. The input is not modified."""
    ops = ops or column_operators(p, dom)
    linear_tol = cfg.linear_tol if cfg is not None else 1e-10
    return _advance(state, dt, p, ops, linear_tol, state.theta, None)


# -- gradient-flow form of the (U, chi) subsystem -------------------------

_NORMALIZED = dict(c=1.0, kappa=1.0, lam=1.0, nu=1.0, alpha=1.0, beta=1.0, gamma=1.0, L=2.0, rho0=1.0, g=1.0, theta_c=1.0)


def _require_normalized(p: MaterialParams) -> None:
    off = [k for k, v in _NORMALIZED.items() if getattr(p, k) != v]
    if off:
        raise ModelError(
            "the gradient-flow form is stated for the normalized constants; "
            f"differs in: {', '.join(off)}"
        )


def gradient_flow_energy(U: np.ndarray, chi: np.ndarray, theta_gamma: float, dom: ColumnDomain) -> float:
    """The convex potential of the (U, chi) flow, normalized constants, no additive shift."""
    if np.any(chi < 0) or np.any(chi > 1):
        return math.inf
    z = dom.z_centers
    local = 0.5 * (U - (1.0 - chi)) ** 2 + 2.0 * chi * (1.0 - theta_gamma) - z * U
    return dom.integrate(local) + dom.integrate(U) * dom.integrate(1.0 - chi + z) / dom.volume_total


def _gradient_flow_forcing(theta: np.ndarray, theta_gamma: float, dom: ColumnDomain):
    gap = theta - theta_gamma
    return gap - dom.mean(gap), 2.0 * gap


def gradient_flow_step(
    v: tuple[np.ndarray, np.ndarray],
    theta_input: np.ndarray,
    dt: float,
    p: MaterialParams,
    dom: ColumnDomain,
    tol: float = 1e-10,
    max_sweeps: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Fully implicit Euler step of the (U, chi) gradient flow.

    Minimizes ``psi(v) + |v - v_old|^2/(2 dt) - <f, v>`` by alternating the
    exact ``chi`` resolvent (clamp) and the exact diagonal ``U`` solve. The
    first sweep reproduces the split sub-updates of :func:`step_coupled`.
    """
    _require_normalized(p)
    U_old, chi_old = v
    f_U, f_chi = _gradient_flow_forcing(theta_input, p.theta_gamma, dom)
    z = dom.z_centers
    w = 1.0 / dt
    U, chi = U_old.copy(), chi_old.copy()
    for _ in range(max_sweeps):
        chi_prev, U_prev = chi, U
        drive = U - 1.0 + 2.0 * (1.0 - p.theta_gamma) - dom.mean(U) - f_chi
        chi = np.clip((w * chi_old - drive) / (w + 1.0), 0.0, 1.0)
        rhs = (1.0 - chi) + z - dom.mean(1.0 - chi + z) + f_U
        U = (w * U_old + rhs) / (w + 1.0)
        change = max(np.max(np.abs(chi - chi_prev)), np.max(np.abs(U - U_prev)))
        if change <= tol:
            break
    else:
        raise NumericalError("gradient-flow step did not converge")
    return U, chi


# -- fixed-point construction with truncated temperature ------------------


@dataclass(eq=False)
class PicardResult:
    theta: np.ndarray  # (n_steps + 1, n_cells)
    U: np.ndarray
    chi: np.ndarray
    times: np.ndarray
    reports: list[StepReport]
    factors: list[float]
    distances: list[float]
    iterations: int
    saturated: bool


def _l2_space_time(diff: np.ndarray, dt: float, vol: np.ndarray) -> float:
    return math.sqrt(dt * float(np.sum((diff * diff) @ vol)))


def picard_solve(
    state0: StateField,
    T_horizon: float,
    dt: float,
    p: MaterialParams,
    dom: ColumnDomain,
    cfg: StepperConfig,
    ops: ColumnOperators | None = None,
) -> PicardResult:
    """Fixed point of ``theta_hat -> theta`` on ``[t0, t0 + T_horizon]``.

    For a prescribed temperature history ``theta_hat`` (truncated to
    ``[0, R_cutoff]``) the (U, chi) subsystem and then the linear heat
    equation are integrated with the same discrete operators as the
    coupled stepper, so the fixed point reproduces its trajectory.
    Iterates until the discrete L2 space-time distance of successive
    temperature histories is below ``cfg.picard_tol``.
    """
    cfg.check_for(p)
    ops = ops or column_operators(p, dom)
    consts = _consts(p)
    n_steps = max(1, int(round(T_horizon / dt)))
    n = dom.n_cells
    R = cfg.R_cutoff
    theta_hat = np.tile(state0.theta, (n_steps + 1, 1))
    factors: list[float] = []
    distances: list[float] = []
    prev_dist = None
    for iteration in range(1, cfg.picard_max_iter + 1):
        theta = np.empty((n_steps + 1, n))
        U = np.empty((n_steps + 1, n))
        chi = np.empty((n_steps + 1, n))
        theta[0], U[0], chi[0] = state0.theta, state0.U, state0.chi
        reports = []
        frozen = cutoff(theta_hat, R)
        state = state0
        for k in range(n_steps):
            lag = StateField(state.theta, state.U, state.chi, state.t)
            state, rep = _advance(lag, dt, p, ops, cfg.linear_tol, frozen[k], frozen[k + 1], consts)
            theta[k + 1], U[k + 1], chi[k + 1] = state.theta, state.U, state.chi
            rep.picard_iters = iteration
            reports.append(rep)
        dist = _l2_space_time(theta[1:] - theta_hat[1:], dt, ops.vol)
        distances.append(dist)
        if prev_dist is not None and prev_dist > 0:
            factors.append(dist / prev_dist)
        prev_dist = dist
        saturated = bool(np.any(theta_hat > R) or np.any(theta_hat < 0))
        theta_hat = theta
        if dist <= cfg.picard_tol:
            times = state0.t + dt * np.arange(n_steps + 1)
            return PicardResult(theta, U, chi, times, reports, factors, distances, iteration, saturated)
    raise PicardNotConverged(
        f"picard iteration did not converge in {cfg.picard_max_iter} iterations "
        f"(last distance {distances[-1]:.3e}); shorten the window",
        factors,
    )


# -- driver ---------------------------------------------------------------


@dataclass(eq=False)
class Sample:
    step: int
    t: float
    theta: np.ndarray
    U: np.ndarray
    chi: np.ndarray
    U_t: np.ndarray
    chi_t: np.ndarray
    entropy_production: float
    # running time integrals since t = 0
    heat_in: float
    dissipation: float
    boundary_defect: float
    entropy_inflow: float

    def state(self) -> StateField:
        return StateField(self.theta.copy(), self.U.copy(), self.chi.copy(), self.t)


@dataclass(eq=False)
class RunResult:
    state: StateField
    samples: list[Sample]
    n_steps: int
    failed: bool = False
    message: str = ""
    last_report: StepReport | None = None


Observer = Callable[[StateField, StepReport], None]


def _initial_report(state: StateField, p: MaterialParams, ops: ColumnOperators) -> StepReport:
    zero = np.zeros_like(state.theta)
    heat_in, dissipation, defect, inflow = _balance_terms(state.theta, zero, zero, p, ops)
    return StepReport(
        U_t=zero,
        chi_t=zero.copy(),
        active_set=np.zeros(state.theta.shape, dtype=np.int8),
        xi=zero.copy(),
        picard_iters=0,
        max_theta=float(state.theta.max()),
        min_theta=float(state.theta.min()),
        heat_in=heat_in,
        entropy_production=dissipation,
        boundary_defect=defect,
        entropy_inflow=inflow,
    )


def run(
    state0: StateField,
    cfg: StepperConfig,
    p: MaterialParams,
    dom: ColumnDomain,
    observer: Observer | None = None,
    stride: int = 1,
    sample_stride: int | None = None,
) -> RunResult:
    """Advance from ``state0.t`` to ``state0.t + cfg.t_end``.

    ``observer(state, report)`` is called for the initial state, every
    ``stride`` steps and for the final state; ``sample_stride`` (default
    ``stride``) controls which states are kept in ``samples``. On a
    numerical failure the partial result is returned with ``failed=True``.
    """
    if stride < 1:
        raise ModelError("stride must be >= 1")
    sample_stride = stride if sample_stride is None else sample_stride
    if sample_stride < 1:
        raise ModelError("sample_stride must be >= 1")
    cfg.check_for(p)
    ops = column_operators(p, dom)
    dt = cfg.dt
    n_full = int(math.floor(cfg.t_end / dt + 1e-9))
    last = cfg.t_end - n_full * dt
    dts = [dt] * n_full
    if last > 1e-12 * max(dt, 1.0):
        dts.append(last)
    n_steps = len(dts)

    state = state0.copy()
    report = _initial_report(state, p, ops)
    totals = [0.0, 0.0, 0.0, 0.0]
    samples: list[Sample] = []

    def record(k: int, st: StateField, rep: StepReport) -> None:
        samples.append(
            Sample(
                step=k, t=st.t, theta=st.theta.copy(), U=st.U.copy(), chi=st.chi.copy(),
                U_t=rep.U_t.copy(), chi_t=rep.chi_t.copy(),
                entropy_production=rep.entropy_production,
                heat_in=totals[0], dissipation=totals[1],
                boundary_defect=totals[2], entropy_inflow=totals[3],
            )
        )

    def emit(k: int, st: StateField, rep: StepReport) -> None:
        final = k == n_steps
        if observer is not None and (k % stride == 0 or final):
            observer(st.copy(), rep)
        if k % sample_stride == 0 or final:
            record(k, st, rep)

    def accumulate(rep: StepReport) -> None:
        totals[0] += rep.dt * rep.heat_in
        totals[1] += rep.dt * rep.entropy_production
        totals[2] += rep.dt * rep.boundary_defect
        totals[3] += rep.dt * rep.entropy_inflow

    emit(0, state, report)
    consts = _consts(p)
    k = done = 0
    try:
        if cfg.scheme == COUPLED:
            for k in range(1, n_steps + 1):
                state, report = _advance(state, dts[k - 1], p, ops, cfg.linear_tol, state.theta, None, consts)
                accumulate(report)
                emit(k, state, report)
                done = k
        else:
            per_window = max(1, int(round(cfg.picard_window / dt)))
            while k < n_full:
                m = min(per_window, n_full - k)
                res = picard_solve(state, m * dt, dt, p, dom, cfg, ops)
                for j in range(1, m + 1):
                    state = StateField(res.theta[j], res.U[j], res.chi[j], res.times[j])
                    report = res.reports[j - 1]
                    accumulate(report)
                    k += 1
                    emit(k, state, report)
                    done = k
            if n_steps > n_full:
                # leftover fraction of a step: one coupled step
                k += 1
                state, report = _advance(state, dts[-1], p, ops, cfg.linear_tol, state.theta, None, consts)
                accumulate(report)
                emit(k, state, report)
                done = k
    except NumericalError as exc:
        return RunResult(state, samples, done, failed=True, message=str(exc), last_report=report)
    return RunResult(state, samples, n_steps, last_report=report)
