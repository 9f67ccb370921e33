"""Independent reference computations used by the tests.

Nothing here imports the package's numerics: these are deliberately naive
re-derivations (explicit loops, dense matrices, scalar bisection) from the
model equations, so agreement with the package is evidence rather than
tautology.
"""

from __future__ import annotations

import math

import numpy as np

NORMALIZED = dict(
    c=1.0, kappa=1.0, lam=1.0, nu=1.0, alpha=1.0, beta=1.0, gamma=1.0,
    L=2.0, rho0=1.0, g=1.0, theta_c=1.0,
)


def grid(a, b, n):
    dz = (b - a) / n
    edges = [a + i * dz for i in range(n + 1)]
    centers = [a + (i + 0.5) * dz for i in range(n)]
    return dz, edges, centers


def volume_above(a, b, areas, r):
    """Volume of the part of a piecewise-constant column lying above ``r``."""
    n = len(areas)
    dz, edges, _ = grid(a, b, n)
    total = 0.0
    for i in range(n):
        lo, hi = edges[i], edges[i + 1]
        overlap = max(0.0, hi - max(lo, r)) if r < hi else 0.0
        total += areas[i] * min(overlap, dz)
    return total


def fraction_above(a, b, areas, r):
    n = len(areas)
    dz = (b - a) / n
    return volume_above(a, b, areas, r) / (sum(areas) * dz)


def mean_height(a, b, areas):
    dz, _, centers = grid(a, b, len(areas))
    return sum(A * z for A, z in zip(areas, centers)) / sum(areas)


def scalar_bisect(func, lo, hi, iters=200):
    """Root of an increasing scalar function on ``[lo, hi]``."""
    f_lo = func(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if (func(mid) <= 0) == (f_lo <= 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi_implicit(chi_old, U, theta, dt, p):
    """Scalar inclusion ``gamma (x - chi_old)/dt + G(x) + dI(x) ∋ 0`` by projection of the root."""
    def g(x):
        return (p["gamma"] * (x - chi_old) / dt
                + p["alpha"] * p["lam"] * (U - p["alpha"] * (1.0 - x))
                + p["L"] * (1.0 - theta / p["theta_c"]))
    if g(0.0) >= 0.0:
        return 0.0
    if g(1.0) <= 0.0:
        return 1.0
    return scalar_bisect(g, 0.0, 1.0)


def dense_heat_matrix(areas, dz, kappa, h_bottom, h_top, h_lat=0.0, perimeter=None):
    """Finite-volume conduction operator ``K`` and exchange vector ``H`` [W/K].

    Face conductance uses the two half-cell resistances in series; a Robin
    end is the transfer coefficient in series with the half cell.
    """
    n = len(areas)
    K = np.zeros((n, n))
    for j in range(n - 1):
        r = 0.5 * dz / (kappa * areas[j]) + 0.5 * dz / (kappa * areas[j + 1])
        cond = 1.0 / r
        K[j, j] += cond
        K[j + 1, j + 1] += cond
        K[j, j + 1] -= cond
        K[j + 1, j] -= cond
    H = np.zeros(n)
    if h_bottom > 0:
        H[0] += 1.0 / (1.0 / (h_bottom * areas[0]) + 0.5 * dz / (kappa * areas[0]))
    if h_top > 0:
        H[-1] += 1.0 / (1.0 / (h_top * areas[-1]) + 0.5 * dz / (kappa * areas[-1]))
    if h_lat > 0:
        for j in range(n):
            H[j] += h_lat * perimeter[j] * dz
    return K, H


def reference_step(theta, U, chi, dt, p, a, b, areas, h_bottom, h_top, theta_gamma):
    """One split step (phase, volume, heat) assembled with dense linear algebra."""
    n = len(theta)
    dz, _, z = grid(a, b, n)
    vol = np.array(areas) * dz
    V = vol.sum()
    m = float(np.dot(vol, z) / V)
    al, lam, nu, beta = p["alpha"], p["lam"], p["nu"], p["beta"]

    chi_new = np.array([chi_implicit(chi[j], U[j], theta[j], dt, p) for j in range(n)])
    chi_t = (chi_new - chi) / dt

    f = al * lam * (1.0 - chi_new) + beta * (theta - p["theta_c"])
    P = np.outer(np.ones(n), vol) / V  # volume-weighted mean as a matrix
    rhs_U = f - P @ f + p["rho0"] * p["g"] * (np.array(z) - m)
    A_U = (nu / dt + lam) * np.eye(n)
    U_new = np.linalg.solve(A_U, nu / dt * U + rhs_U)
    U_t = (U_new - U) / dt

    # heat: c (th1 - th0)/dt * vol + K th1 = H (theta_gamma - th1) + vol * S
    chi_mid = 0.5 * (chi + chi_new)
    eps_mid = U - al * (1.0 - chi_mid)
    S_exp = nu * U_t**2 + 0.5 * lam * dt * U_t**2 - (al * lam * eps_mid + p["L"]) * chi_t
    sink = beta * U_t > 0
    S_exp = np.where(sink, S_exp, S_exp - beta * U_t * theta)
    S_imp = np.where(sink, -beta * U_t, 0.0)
    K, H = dense_heat_matrix(areas, dz, p["kappa"], h_bottom, h_top)
    M = np.diag(p["c"] * vol / dt) + K + np.diag(H) - np.diag(vol * S_imp)
    rhs = p["c"] * vol / dt * theta + vol * S_exp + H * theta_gamma
    theta_new = np.linalg.solve(M, rhs)
    return theta_new, U_new, chi_new


def brute_sign_changes(values):
    s = np.sign(values)
    return np.flatnonzero(s[1:] != s[:-1])


def log2_ratio(a, b):
    return math.log2(a / b)
