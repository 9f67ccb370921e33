import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravphase.core_model import ModelError, StateField, build_column, preset
from gravphase.equilibrium import collocated_equilibrium, fields_from_chi
from gravphase.evolution import (
    COUPLED,
    LOWER,
    PICARD,
    UPPER,
    PicardNotConverged,
    StepperConfig,
    StepRejected,
    chi_resolvent,
    column_operators,
    cutoff,
    gradient_flow_energy,
    gradient_flow_step,
    heat_source,
    picard_solve,
    run,
    source_forms,
    step_coupled,
    update_theta,
    update_U,
)

import oracles


def mixed_state(dom, rng, theta_scale=0.2):
    n = dom.n_cells
    chi = rng.uniform(0.0, 1.0, n)
    chi[: n // 4] = 1.0
    chi[-n // 4:] = 0.0
    U = rng.normal(0.0, 0.1, n)
    U -= dom.mean(U)
    theta = 1.0 + theta_scale * rng.uniform(-1, 1, n)
    return StateField(theta, U, chi)


def test_chi_resolvent_example(normalized):
    chi, chi_t, active, xi = chi_resolvent(np.array([0.5]), np.array([0.0]), np.array([1.0]), 1.0, normalized)
    assert chi[0] == pytest.approx(0.75, abs=1e-15)
    assert chi_t[0] == pytest.approx(0.25)
    assert active[0] == 0 and xi[0] == 0.0
    ref = oracles.chi_implicit(0.5, 0.0, 1.0, 1.0, oracles.NORMALIZED)
    assert chi[0] == pytest.approx(ref, abs=1e-14)


def test_chi_resolvent_saturates(normalized):
    chi, _, active, xi = chi_resolvent(np.array([0.1, 0.05]), np.zeros(2), np.array([50.0, 1e-3]), 0.1, normalized)
    assert chi[0] == 1.0 and active[0] == UPPER and xi[0] > 0
    assert chi[1] == 0.0 and active[1] == LOWER and xi[1] < 0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(-2, 2), st.floats(0.05, 5), st.floats(1e-4, 10))
def test_chi_resolvent_matches_scalar_solve(chi0, U, theta, dt):
    p, _ = preset("normalized")
    chi, _, active, _ = chi_resolvent(np.array([chi0]), np.array([U]), np.array([theta]), dt, p)
    assert chi[0] == pytest.approx(oracles.chi_implicit(chi0, U, theta, dt, oracles.NORMALIZED), abs=1e-12)
    assert (active[0] == LOWER) <= (chi[0] == 0.0)
    assert (active[0] == UPPER) <= (chi[0] == 1.0)


def test_update_U_example(normalized):
    dom = build_column(0.0, 1.0, 16)
    state = StateField(np.ones(16), np.zeros(16), np.ones(16))
    U, U_t = update_U(state, np.ones(16), np.ones(16), 0.1, normalized, dom)
    assert U == pytest.approx((0.1 / 1.1) * (dom.z_centers - 0.5), abs=1e-15)
    assert U_t == pytest.approx(U / 0.1)


def test_update_U_no_forcing(normalized):
    dom = build_column(0.0, 1.0, 8)
    state = StateField(np.ones(8), np.zeros(8), np.ones(8))
    U, _ = update_U(state, np.ones(8), np.ones(8), 0.5, normalized.with_(g=0.0), dom)
    assert np.all(U == 0.0)


def test_update_U_keeps_zero_mean(normalized, rng):
    dom = build_column(0.0, 2.0, 33, lambda z: 1.0 + z * z)
    state = mixed_state(dom, rng)
    U, _ = update_U(state, rng.uniform(0, 1, 33), rng.uniform(0.5, 2, 33), 0.3, normalized, dom)
    assert abs(dom.mean(U)) <= 1e-15


def test_kernel_matches_dense_oracle(normalized, rng):
    areas = rng.uniform(0.5, 2.0, 24)
    dom = build_column(0.0, 1.5, 24, areas)
    p = normalized.with_(theta_gamma=1.05, h_bottom=2.0, h_top=0.5)
    state = mixed_state(dom, rng)
    for dt in (1e-3, 0.05):
        new, _ = step_coupled(state, dt, p, dom)
        ref = oracles.reference_step(
            state.theta, state.U, state.chi, dt, dict(oracles.NORMALIZED), 0.0, 1.5,
            list(areas), 2.0, 0.5, 1.05,
        )
        assert new.theta == pytest.approx(ref[0], abs=1e-12)
        assert new.chi == pytest.approx(ref[2], abs=1e-13)
        assert new.U == pytest.approx(ref[1], abs=1e-13)


def test_kernel_heat_solve_matches_dense_oracle_uniform_area(normalized, rng):
    dom = build_column(0.0, 1.0, 20)
    p = normalized.with_(theta_gamma=0.95, h_bottom=3.0, h_top=1.0)
    state = mixed_state(dom, rng)
    new, _ = step_coupled(state, 0.02, p, dom)
    ref = oracles.reference_step(
        state.theta, state.U, state.chi, 0.02, dict(oracles.NORMALIZED), 0.0, 1.0,
        [1.0] * 20, 3.0, 1.0, 0.95,
    )
    assert new.theta == pytest.approx(ref[0], abs=1e-12)


def test_split_functions_match_kernel(normalized, rng):
    dom = build_column(0.0, 1.0, 40, lambda z: 1.0 + 0.5 * np.sin(3 * z))
    p = normalized.with_(theta_gamma=1.1, h_lateral=0.3)
    ops = column_operators(p, dom)
    state = mixed_state(dom, rng)
    dt = 0.01
    chi, chi_t, active, xi = chi_resolvent(state.chi, state.U, state.theta, dt, p)
    U, U_t = update_U(state, chi, state.theta, dt, p, dom, ops)
    theta, _ = update_theta(state, U_t, chi_t, state.U, 0.5 * (state.chi + chi), dt, p, dom, ops=ops)
    new, report = step_coupled(state, dt, p, dom, ops=ops)
    assert new.chi == pytest.approx(chi, abs=1e-15)
    assert new.U == pytest.approx(U, abs=1e-14)
    assert new.theta == pytest.approx(theta, abs=1e-13)
    assert np.array_equal(report.active_set, active)
    assert report.xi == pytest.approx(xi, abs=1e-12)
    assert new.t == pytest.approx(dt)
    assert np.all(new.chi[report.active_set == LOWER] == 0.0)
    assert np.all(new.chi[report.active_set == UPPER] == 1.0)


def test_source_forms_agree(normalized, rng):
    dom = build_column(0.0, 1.0, 32)
    state = mixed_state(dom, rng, theta_scale=0.6)
    for dt in (1e-3, 0.1, 1.0):
        chi, chi_t, _, xi = chi_resolvent(state.chi, state.U, state.theta, dt, normalized)
        _, U_t = update_U(state, chi, state.theta, dt, normalized, dom)
        first, second = source_forms(U_t, chi_t, xi, state.U, state.chi, state.theta, dt, normalized)
        scale = max(1.0, float(np.max(np.abs(first))))
        assert np.max(np.abs(first - second)) <= 1e-12 * scale
        explicit, implicit = heat_source(U_t, chi_t, state.U, 0.5 * (state.chi + chi), state.theta, dt, normalized)
        assert explicit + implicit * state.theta == pytest.approx(first, abs=1e-12 * scale)


def test_equilibrium_is_fixed_point(normalized):
    dom = build_column(0.0, 1.0, 64, lambda z: 1.0 + z)
    for theta_g in (0.5, 1.0, 1.1, 1.3):
        p = normalized.with_(theta_gamma=theta_g)
        sol = collocated_equilibrium(p, dom)
        state = StateField(np.full(64, theta_g), sol.U_inf, sol.chi_inf)
        new, report = step_coupled(state, 0.01, p, dom)
        assert np.max(np.abs(new.theta - state.theta)) <= 1e-10
        assert np.max(np.abs(new.U - state.U)) <= 1e-10
        assert np.max(np.abs(new.chi - state.chi)) <= 1e-10
        assert np.max(np.abs(report.U_t)) <= 1e-8


def test_update_theta_equilibrium_temperature(normalized):
    dom = build_column(0.0, 1.0, 16)
    p = normalized.with_(theta_gamma=1.2)
    state = StateField(np.full(16, 1.2), np.zeros(16), np.ones(16))
    zero = np.zeros(16)
    theta, _ = update_theta(state, zero, zero, state.U, state.chi, 0.1, p, dom)
    assert theta == pytest.approx(np.full(16, 1.2), abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 10.0))
def test_max_principle_source_free(seed, dt):
    rng = np.random.default_rng(seed)
    p, _ = preset("normalized")
    dom = build_column(0.0, 1.0, 30, rng.uniform(0.2, 3.0, 30))
    theta0 = rng.uniform(0.5, 2.0, 30)
    p = p.with_(theta_gamma=float(rng.uniform(theta0.min(), theta0.max())))
    state = StateField(theta0, np.zeros(30), np.ones(30))
    zero = np.zeros(30)
    theta, _ = update_theta(state, zero, zero, state.U, state.chi, dt, p, dom)
    assert theta.min() >= theta0.min() - 1e-12
    assert theta.max() <= theta0.max() + 1e-12


def test_insulated_diffusion_conserves_heat(normalized, rng):
    p = normalized.with_(h_bottom=0.0, h_top=0.0)
    dom = build_column(0.0, 1.0, 50, lambda z: 1.0 + z)
    state = StateField(rng.uniform(0.5, 1.5, 50), np.zeros(50), np.ones(50))
    zero = np.zeros(50)
    theta, _ = update_theta(state, zero, zero, state.U, state.chi, 0.5, p, dom)
    before = float(np.dot(dom.cell_volume, state.theta))
    assert float(np.dot(dom.cell_volume, theta)) == pytest.approx(before, rel=1e-12)


def test_positivity_loss_rejected(normalized):
    # an insulated solid slightly above the melting point melts completely in
    # one huge step and the latent heat overdraws the sensible heat
    dom = build_column(0.0, 1.0, 16)
    p = normalized.with_(h_bottom=0.0, h_top=0.0)
    state = StateField(np.full(16, 1.05), np.zeros(16), np.zeros(16))
    with pytest.raises(StepRejected, match="reduce dt"):
        step_coupled(state, 10.0, p, dom)
    assert step_coupled(state, 0.1, p, dom)[0].theta.min() > 0


def test_first_order_consistency(normalized, rng):
    # smooth interior start with temperature compatible with insulated ends;
    # incompatible boundary data excites stiff modes and masks the order
    dom = build_column(0.0, 1.0, 32)
    z = dom.z_centers
    U = 0.05 * np.cos(np.pi * z)
    U -= dom.mean(U)
    state = StateField(1.0 + 0.1 * np.cos(np.pi * z), U, 0.4 + 0.2 * z)
    p = normalized.with_(h_bottom=0.0, h_top=0.0)

    def gap(dt):
        one, _ = step_coupled(state, dt, p, dom)
        half, _ = step_coupled(state, dt / 2, p, dom)
        two, _ = step_coupled(half, dt / 2, p, dom)
        return max(np.max(np.abs(one.theta - two.theta)), np.max(np.abs(one.U - two.U)),
                   np.max(np.abs(one.chi - two.chi)))

    g1, g2 = gap(4e-3), gap(2e-3)
    assert oracles.log2_ratio(g1, g2) == pytest.approx(2.0, abs=0.2)


def test_gradient_flow_requires_normalized(normalized):
    dom = build_column(0.0, 1.0, 8)
    with pytest.raises(ModelError, match="nu"):
        gradient_flow_step((np.zeros(8), np.ones(8)), np.ones(8), 0.1, normalized.with_(nu=2.0), dom)


def test_gradient_flow_fixed_point(normalized):
    dom = build_column(0.0, 1.0, 32)
    p = normalized.with_(theta_gamma=1.1)
    sol = collocated_equilibrium(p, dom)
    U, chi = gradient_flow_step((sol.U_inf, sol.chi_inf), np.full(32, 1.1), 0.1, p, dom)
    assert U == pytest.approx(sol.U_inf, abs=1e-10)
    assert chi == pytest.approx(sol.chi_inf, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1.0))
def test_gradient_flow_descent(seed, dt):
    rng = np.random.default_rng(seed)
    p, _ = preset("normalized", theta_gamma=float(rng.uniform(0.5, 1.5)))
    dom = build_column(0.0, 1.0, 24)
    state = mixed_state(dom, rng, theta_scale=0.5)
    f_theta = state.theta
    U, chi = gradient_flow_step((state.U, state.chi), f_theta, dt, p, dom)
    gap = f_theta - p.theta_gamma
    f_U, f_chi = gap - dom.mean(gap), 2.0 * gap
    work = dom.integrate(f_U * (U - state.U) + f_chi * (chi - state.chi))
    move = dom.integrate((U - state.U) ** 2 + (chi - state.chi) ** 2) / (2 * dt)
    before = gradient_flow_energy(state.U, state.chi, p.theta_gamma, dom)
    after = gradient_flow_energy(U, chi, p.theta_gamma, dom)
    assert after + move - work <= before + 1e-10 * max(1.0, abs(before))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 0.5))
def test_gradient_flow_lipschitz_in_temperature(seed, dt):
    rng = np.random.default_rng(seed)
    p, _ = preset("normalized")
    dom = build_column(0.0, 1.0, 24, rng.uniform(0.5, 2.0, 24))
    state = mixed_state(dom, rng)
    t1 = rng.uniform(0.5, 1.5, 24)
    t2 = t1 + rng.normal(0, 0.1, 24)
    U1, c1 = gradient_flow_step((state.U, state.chi), t1, dt, p, dom)
    U2, c2 = gradient_flow_step((state.U, state.chi), t2, dt, p, dom)
    dist = math.sqrt(dom.integrate((U1 - U2) ** 2 + (c1 - c2) ** 2))
    bound = math.sqrt(5.0) * dt * math.sqrt(dom.integrate((t1 - t2) ** 2))
    assert dist <= 1.1 * bound + 1e-12


def test_gradient_flow_agrees_with_split_to_second_order(normalized, rng):
    dom = build_column(0.0, 1.0, 32)
    state = mixed_state(dom, rng)

    def gap(dt):
        U, chi = gradient_flow_step((state.U, state.chi), state.theta, dt, normalized, dom)
        new, _ = step_coupled(state, dt, normalized, dom)
        return max(np.max(np.abs(U - new.U)), np.max(np.abs(chi - new.chi)))

    g1, g2 = gap(2e-3), gap(1e-3)
    assert g1 < 1e-4
    assert oracles.log2_ratio(g1, g2) >= 1.8


def test_cutoff():
    assert np.array_equal(cutoff(np.array([-1.0, 0.5, 3.0]), 2.0), [0.0, 0.5, 2.0])


def test_picard_equilibrium_one_iteration(normalized):
    dom = build_column(0.0, 1.0, 32)
    p = normalized.with_(theta_gamma=1.1)
    sol = collocated_equilibrium(p, dom)
    state = StateField(np.full(32, 1.1), sol.U_inf, sol.chi_inf)
    cfg = StepperConfig(dt=1e-2, scheme=PICARD, R_cutoff=10.0)
    res = picard_solve(state, 0.2, 1e-2, p, dom, cfg)
    assert res.iterations == 1 and not res.saturated
    assert np.max(np.abs(res.theta - 1.1)) <= 1e-12


def test_picard_matches_coupled_short(normalized, rng):
    dom = build_column(0.0, 1.0, 16)
    state = mixed_state(dom, rng)
    cfg = StepperConfig(dt=1e-2, scheme=PICARD, R_cutoff=10.0, picard_tol=1e-12)
    res = picard_solve(state, 0.1, 1e-2, normalized, dom, cfg)
    cur = state
    for k in range(10):
        cur, _ = step_coupled(cur, 1e-2, normalized, dom)
        assert res.theta[k + 1] == pytest.approx(cur.theta, abs=1e-11)
    assert all(f < 1 for f in res.factors)


def test_picard_saturation_flagged(normalized):
    dom = build_column(0.0, 1.0, 16)
    state = StateField(np.full(16, 1.5), np.zeros(16), np.ones(16))
    cfg = StepperConfig(dt=1e-2, scheme=PICARD, R_cutoff=1.2)
    res = picard_solve(state, 0.1, 1e-2, normalized, dom, cfg)
    assert res.saturated


def test_picard_iteration_cap(normalized, rng):
    dom = build_column(0.0, 1.0, 16)
    state = mixed_state(dom, rng)
    cfg = StepperConfig(dt=1e-2, scheme=PICARD, R_cutoff=10.0, picard_max_iter=2, picard_tol=1e-14)
    with pytest.raises(PicardNotConverged) as info:
        picard_solve(state, 0.5, 1e-2, normalized, dom, cfg)
    assert len(info.value.factors) == 1


def test_picard_cutoff_must_exceed_boundary_temperature(normalized):
    dom = build_column(0.0, 1.0, 8)
    cfg = StepperConfig(scheme=PICARD, R_cutoff=0.5)
    with pytest.raises(ModelError, match="R_cutoff"):
        picard_solve(StateField(np.ones(8), np.zeros(8), np.ones(8)), 0.1, 0.01, normalized, dom, cfg)


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(t_end=-1.0), dict(scheme="rk4"), dict(picard_tol=0.0)])
def test_config_validation(kwargs):
    with pytest.raises(ModelError):
        StepperConfig(**kwargs)


def test_run_contracts(normalized, rng):
    dom = build_column(0.0, 1.0, 16)
    state = mixed_state(dom, rng)
    empty = run(state, StepperConfig(dt=0.01, t_end=0.0), normalized, dom)
    assert empty.n_steps == 0 and len(empty.samples) == 1 and not empty.failed

    seen = []
    res = run(state, StepperConfig(dt=0.01, t_end=0.105), normalized, dom,
              observer=lambda s, r: seen.append(s.t), stride=4)
    assert res.n_steps == 11
    assert res.state.t == pytest.approx(0.105, abs=1e-14)
    assert seen[0] == 0.0 and seen[-1] == pytest.approx(0.105)
    assert seen[1:-1] == pytest.approx([0.04, 0.08])
    assert [s.step for s in res.samples] == [0, 4, 8, 11]

    again = run(state, StepperConfig(dt=0.01, t_end=0.105), normalized, dom)
    assert np.array_equal(again.state.theta, res.state.theta)
    assert state.t == 0.0 and state.theta is not res.state.theta


def test_run_picard_matches_coupled(normalized, rng):
    dom = build_column(0.0, 1.0, 16)
    state = mixed_state(dom, rng)
    a = run(state, StepperConfig(dt=0.01, t_end=0.3, scheme=COUPLED), normalized, dom)
    b = run(state, StepperConfig(dt=0.01, t_end=0.3, scheme=PICARD, R_cutoff=10.0,
                                 picard_tol=1e-13, picard_window=0.1), normalized, dom)
    assert b.n_steps == a.n_steps
    assert b.state.theta == pytest.approx(a.state.theta, abs=1e-11)


def test_run_reports_failure(normalized):
    dom = build_column(0.0, 1.0, 16)
    p = normalized.with_(h_bottom=0.0, h_top=0.0)
    state = StateField(np.full(16, 1.05), np.zeros(16), np.zeros(16))
    res = run(state, StepperConfig(dt=10.0, t_end=50.0), p, dom)
    assert res.failed and res.n_steps == 0
    assert "reduce dt" in res.message


def test_run_stays_admissible(normalized, rng):
    dom = build_column(0.0, 1.0, 32, lambda z: 1.0 + z)
    p = normalized.with_(theta_gamma=0.9)
    state = mixed_state(dom, rng)
    res = run(state, StepperConfig(dt=5e-3, t_end=1.0), p, dom, stride=10)
    for s in res.samples:
        assert np.all(s.theta > 0)
        assert np.all((s.chi >= 0) & (s.chi <= 1))
        assert abs(dom.mean(s.U)) <= 1e-13
    U_eq, _ = fields_from_chi(p, dom, res.state.chi)
    assert np.all(np.isfinite(U_eq))
