"""Fused single-step kernel for the coupled stepper.

Performs the same arithmetic as the composition of ``chi_resolvent``,
``update_U``, ``heat_source`` and ``update_theta`` in
:mod:`gravphase.evolution`, in one compiled loop nest. The split functions
remain the reference; the test suite checks the two agree.
"""

from __future__ import annotations

import numpy as np

from .tridiag import _thomas_fast as _thomas, njit

# layout of the ``consts`` vector
ALPHA, LAM, NU, BETA, GAMMA, LATENT, THETA_C, THETA_G, RHO0G, HEATCAP = range(10)
# layout of the returned ``scalars`` vector
HEAT_IN, DISSIPATION, DEFECT, INFLOW, RESIDUAL, MIN_T, MAX_T, BAD_CELL = range(8)

OK, NONFINITE, NONPOSITIVE = 0, 1, 2


def _step(theta, U, chi, theta_lag, theta_next, use_next, dt, consts,
          vol, z_rel, face_cond, exchange, stiff_diag, volume_total):
    n = theta.shape[0]
    a = consts[ALPHA]
    lam = consts[LAM]
    nu = consts[NU]
    beta = consts[BETA]
    gamma = consts[GAMMA]
    L = consts[LATENT]
    th_c = consts[THETA_C]
    th_g = consts[THETA_G]
    rho0g = consts[RHO0G]
    c = consts[HEATCAP]

    chi_new = np.empty(n)
    chi_t = np.empty(n)
    xi = np.empty(n)
    active = np.zeros(n, dtype=np.int8)
    U_new = np.empty(n)
    U_t = np.empty(n)
    diag = np.empty(n)
    rhs = np.empty(n)
    scalars = np.zeros(8)

    k = a * a * lam
    w = gamma / dt
    forcing_mean = 0.0
    for j in range(n):
        drive = a * lam * (U[j] - a) + L * (1.0 - theta_lag[j] / th_c)
        free = (w * chi[j] - drive) / (w + k)
        val = free
        if free < 0.0:
            val = 0.0
            active[j] = -1
        elif free > 1.0:
            val = 1.0
            active[j] = 1
        chi_new[j] = val
        chi_t[j] = (val - chi[j]) / dt
        xi[j] = (w + k) * (free - val)
        forcing_mean += vol[j] * (a * lam * (1.0 - val) + beta * (theta_lag[j] - th_c))
    forcing_mean /= volume_total

    wu = nu / dt
    half = 0.5 * lam * dt
    for j in range(n):
        forcing = a * lam * (1.0 - chi_new[j]) + beta * (theta_lag[j] - th_c)
        u = (wu * U[j] + forcing - forcing_mean + rho0g * z_rel[j]) / (wu + lam)
        U_new[j] = u
        ut = (u - U[j]) / dt
        U_t[j] = ut
        eps_mid = U[j] - a * (1.0 - 0.5 * (chi[j] + chi_new[j]))
        explicit = (nu + half) * ut * ut - (a * lam * eps_mid + L) * chi_t[j]
        expansion = beta * ut
        implicit = 0.0
        if expansion > 0.0:
            if use_next:
                explicit -= expansion * theta_next[j]
            else:
                implicit = -expansion
        else:
            explicit -= expansion * theta_lag[j]
        mass = c * vol[j] / dt
        diag[j] = mass + stiff_diag[j] - vol[j] * implicit
        rhs[j] = mass * theta[j] + vol[j] * explicit + exchange[j] * th_g

    off = -face_cond
    theta_new = _thomas(off, diag, off, rhs)

    res_max = 0.0
    rhs_max = 0.0
    t_min = np.inf
    t_max = -np.inf
    bad = -1
    status = OK
    for j in range(n):
        r = diag[j] * theta_new[j] - rhs[j]
        if j > 0:
            r += off[j - 1] * theta_new[j - 1]
        if j < n - 1:
            r += off[j] * theta_new[j + 1]
        res_max = max(res_max, abs(r))
        rhs_max = max(rhs_max, abs(rhs[j]))
        tj = theta_new[j]
        if not np.isfinite(tj):
            status = NONFINITE
        if tj < t_min:
            t_min = tj
            if tj <= 0.0:
                bad = j
        t_max = max(t_max, tj)
    scalars[RESIDUAL] = res_max / max(rhs_max, 1e-300)
    scalars[MIN_T] = t_min
    scalars[MAX_T] = t_max
    scalars[BAD_CELL] = bad
    if status == OK and t_min <= 0.0:
        status = NONPOSITIVE
    if status != OK:
        return theta_new, U_new, chi_new, U_t, chi_t, active, xi, scalars, status

    heat_in = 0.0
    dissipation = 0.0
    defect = 0.0
    inflow = 0.0
    for j in range(n):
        tj = theta_new[j]
        gap = th_g - tj
        heat_in += exchange[j] * gap
        defect += exchange[j] * gap * gap / tj
        inflow += exchange[j] * gap / tj
        dissipation += vol[j] * (gamma * chi_t[j] * chi_t[j] + nu * U_t[j] * U_t[j]) / tj
        if j < n - 1:
            g = theta_new[j + 1] - tj
            dissipation += face_cond[j] * g * g / (tj * theta_new[j + 1])
    scalars[HEAT_IN] = heat_in
    scalars[DISSIPATION] = dissipation
    scalars[DEFECT] = defect
    scalars[INFLOW] = inflow
    return theta_new, U_new, chi_new, U_t, chi_t, active, xi, scalars, status


if njit is not None:
    fused_step = njit(cache=True)(_step)
else:  # pragma: no cover
    fused_step = _step
