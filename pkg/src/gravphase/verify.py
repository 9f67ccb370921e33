"""Property checks run by ``gravphase verify`` against a configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .config import RunConfig, build_initial_state
from .core_model import ColumnDomain, MaterialParams, StateField, derive_dimensionless, solid_fraction_above
from .diagnostics import energy_balance_residual, lyapunov_series
from .equilibrium import (
    INTERFACE,
    PURE_LIQUID,
    PURE_SOLID,
    classify,
    collocated_equilibrium,
    fields_from_chi,
    offset_K,
    solve_Z,
    z_residual,
    zero_gravity_equilibrium_set,
)
from .evolution import (
    NumericalError,
    PICARD,
    StepperConfig,
    column_operators,
    picard_solve,
    run,
    step_coupled,
)
from .thermo import energy_entropy_densities, free_energy_density

__all__ = ["Check", "PASS", "FAIL", "SKIP", "run_checks", "format_table"]

PASS, FAIL, SKIP = "pass", "FAIL", "skip"


@dataclass(frozen=True)
class Check:
    name: str
    status: str
    detail: str = ""


class _Skip(Exception):
    pass


class _Failed(Exception):
    pass


def _require(condition, message: str) -> None:
    if not condition:
        raise _Failed(message)


def _geometry(cfg: RunConfig, p: MaterialParams, dom: ColumnDomain, state0: StateField) -> str:
    _require(dom.a < dom.m < dom.b, f"m={dom.m} outside ({dom.a}, {dom.b})")
    _require(solid_fraction_above(dom, dom.a) == 1.0 and solid_fraction_above(dom, dom.b) == 0.0, "F must be 1 at the bottom, 0 at the top")
    F = solid_fraction_above(dom, np.linspace(dom.a - 0.1 * dom.ell, dom.b + 0.1 * dom.ell, 2001))
    _require(np.all(np.diff(F) <= 0), "F not monotone")
    groups = derive_dimensionless(p, dom)
    return f"m={dom.m:.6g}, d={groups.d:.4g}, G0={groups.G0:.4g}"


def _gibbs(cfg, p, dom, state0) -> str:
    rng = np.random.default_rng(0)
    theta = p.theta_c * rng.uniform(0.5, 1.5, 100)
    U = rng.uniform(-0.5, 0.5, 100) * p.alpha
    chi = rng.uniform(0.0, 1.0, 100)
    st = StateField(theta, U, chi)
    e, s = energy_entropy_densities(st, p)
    f = free_energy_density(st, p)
    err = float(np.max(np.abs(f + theta * s - e) / np.maximum(np.abs(e), 1e-300)))
    _require(err <= 1e-12, f"relative error {err:.2e}")
    return f"max relative error {err:.1e}"


def _needs_gravity(p: MaterialParams) -> None:
    if p.g == 0:
        raise _Skip("zero gravity: equilibria are not unique")


def _uniqueness(cfg, p, dom, state0) -> str:
    _needs_gravity(p)
    lower, upper = _thresholds(p, dom)
    width = max(upper - lower, 1e-6 * p.theta_c)
    rng = np.random.default_rng(1)
    worst = 0.0
    for theta_g in rng.uniform(lower - width, upper + width, 40):
        theta_g = max(theta_g, 1e-9 * p.theta_c)
        Z = solve_Z(p, dom, theta_g)
        K = offset_K(p, dom, theta_g)
        grid = np.linspace(K - 0.01, K + 1.01, 100_001)
        r = z_residual(p, dom, theta_g, grid)
        changes = np.flatnonzero(np.diff(np.sign(r)) != 0)
        _require(changes.size == 1, f"{changes.size} sign changes at theta_gamma={theta_g}")
        i = changes[0]
        _require(grid[i] <= Z <= grid[i + 1], "root outside the scanned bracket")
        worst = max(worst, abs(float(z_residual(p, dom, theta_g, Z))))
    return f"40 draws, max |residual| {worst:.1e}"


def _thresholds(p, dom) -> tuple[float, float]:
    cls = classify(p, dom, p.theta_gamma, solve_Z(p, dom, p.theta_gamma))
    return cls.theta_lower, cls.theta_upper


def _classification(cfg, p, dom, state0) -> str:
    _needs_gravity(p)
    lower, upper = _thresholds(p, dom)
    span = upper - lower
    sweep = np.linspace(lower - 0.5 * span, upper + 0.5 * span, 201)
    order = {PURE_SOLID: 0, INTERFACE: 1, PURE_LIQUID: 2}
    tags = [classify(p, dom, t, solve_Z(p, dom, t)).case_tag for t in sweep]
    ranks = [order[t] for t in tags]
    _require(all(b >= a for a, b in zip(ranks, ranks[1:])), "case sequence not monotone")
    _require(set(ranks) == {0, 1, 2}, "sweep does not cover all three cases")
    return f"window [{lower:.8g}, {upper:.8g}]"


def _fixed_point(cfg, p, dom, state0) -> str:
    n = dom.n_cells
    if p.g == 0:
        zg = zero_gravity_equilibrium_set(p, dom)
        chis = zg.witnesses
        states = []
        for chi in chis:
            U, _ = fields_from_chi(p, dom, chi)
            states.append(StateField(np.full(n, p.theta_gamma), U, chi))
    else:
        eq = collocated_equilibrium(p, dom)
        states = [StateField(np.full(n, p.theta_gamma), eq.U_inf, eq.chi_inf)]
    worst = 0.0
    for st in states:
        new, _ = step_coupled(st, cfg.stepper.dt, p, dom, cfg.stepper)
        worst = max(
            worst,
            float(np.max(np.abs(new.theta - st.theta))) / p.theta_gamma,
            float(np.max(np.abs(new.U - st.U))) / max(p.alpha, 1e-300),
            float(np.max(np.abs(new.chi - st.chi))),
        )
    _require(worst <= 1e-10, f"one step moves the equilibrium by {worst:.2e}")
    return f"{len(states)} state(s), max scaled change {worst:.1e}"


def _simulation(cfg, p, dom, state0) -> str:
    worst = {"mean_U": 0.0, "min_D": math.inf, "chi_out": 0.0}

    def observer(st, rep):
        # relative to max|U|, with a roundoff floor for fields that are ~0
        scale = max(float(np.max(np.abs(st.U))), 1e-4 * p.alpha)
        worst["mean_U"] = max(worst["mean_U"], abs(dom.mean(st.U)) / scale)
        worst["min_D"] = min(worst["min_D"], rep.entropy_production)
        worst["chi_out"] = max(worst["chi_out"], float(np.max(-st.chi)), float(np.max(st.chi - 1.0)))

    res = run(state0, cfg.stepper, p, dom, observer=observer, stride=1, sample_stride=cfg.sample_stride)
    if res.failed:
        raise NumericalError(res.message)
    _require(worst["chi_out"] <= 0.0, "liquid fraction left [0, 1]")
    _require(worst["mean_U"] <= 1e-10, f"mean U {worst['mean_U']:.2e}")
    _require(worst["min_D"] >= -1e-12, f"negative entropy production {worst['min_D']:.2e}")
    ly = lyapunov_series(res.samples, p, dom)
    _require(ly.monotone, f"Lyapunov increase {ly.max_increase:.2e} beyond slack")
    return f"{res.n_steps} steps, Lyapunov drop {ly.drop:.4g}"


def _picard(cfg, p, dom, state0) -> str:
    dt = cfg.stepper.dt
    n_steps = max(1, min(50, int(round(cfg.stepper.t_end / dt)) or 1))
    R = cfg.stepper.R_cutoff
    if math.isinf(R):
        R = 10.0 * max(float(state0.theta.max()), p.theta_gamma)
    pcfg = replace(cfg.stepper, scheme=PICARD, R_cutoff=R, picard_tol=min(cfg.stepper.picard_tol, 1e-10))
    res = picard_solve(state0, n_steps * dt, dt, p, dom, pcfg)
    ops = column_operators(p, dom)
    st = state0
    diff = 0.0
    norm = 0.0
    for k in range(1, n_steps + 1):
        st, _ = step_coupled(st, dt, p, dom, cfg.stepper, ops)
        diff += dt * float(np.dot(ops.vol, (st.theta - res.theta[k]) ** 2))
        norm += dt * float(np.dot(ops.vol, st.theta**2))
    rel = math.sqrt(diff / norm)
    _require(rel <= 1e-6, f"relative L2 distance {rel:.2e}")
    factors = ", ".join(f"{f:.2f}" for f in res.factors[:4])
    return f"{res.iterations} iterations (factors {factors}), distance {rel:.1e}"


def _energy_order(cfg, p, dom, state0) -> str:
    dt = cfg.stepper.dt
    T = min(cfg.stepper.t_end, 200 * dt)
    if T <= 0:
        raise _Skip("t_end = 0")
    residuals = []
    for h in (dt, dt / 2):
        scfg = StepperConfig(dt=h, t_end=T, linear_tol=cfg.stepper.linear_tol)
        res = run(state0, scfg, p, dom, sample_stride=1)
        if res.failed:
            raise NumericalError(res.message)
        residuals.append(energy_balance_residual(res.samples, p, dom).max_abs)
    # residuals below this are roundoff in the total energy
    floor = 1e-10 * float(np.dot(dom.cell_volume, p.c * state0.theta)) / T
    if residuals[0] <= floor:
        return f"residual {residuals[0]:.1e} at roundoff"
    order = math.log2(residuals[0] / max(residuals[1], 1e-300))
    _require(order >= 0.8, f"measured order {order:.2f}")
    return f"order {order:.2f}"


CHECKS: list[tuple[str, Callable]] = [
    ("geometry and solid fraction", _geometry),
    ("Gibbs identity", _gibbs),
    ("equilibrium uniqueness", _uniqueness),
    ("three-case classification", _classification),
    ("equilibrium is a fixed point", _fixed_point),
    ("simulation invariants", _simulation),
    ("picard matches coupled stepper", _picard),
    ("energy balance first order", _energy_order),
]


def run_checks(cfg: RunConfig) -> tuple[list[Check], bool]:
    """Run every check. Returns ``(checks, numerical_failure)``."""
    p = cfg.params
    dom = cfg.domain()
    state0 = build_initial_state(cfg, dom)
    results = []
    numerical = False
    for name, func in CHECKS:
        try:
            detail = func(cfg, p, dom, state0)
            results.append(Check(name, PASS, detail))
        except _Skip as exc:
            results.append(Check(name, SKIP, str(exc)))
        except NumericalError as exc:
            numerical = True
            results.append(Check(name, FAIL, f"numerical failure: {exc}"))
        except _Failed as exc:
            results.append(Check(name, FAIL, str(exc)))
    return results, numerical


def format_table(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    return "\n".join(f"{c.name:<{width}}  {c.status:<4}  {c.detail}" for c in checks)
