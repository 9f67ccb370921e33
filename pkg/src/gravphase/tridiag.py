"""Thomas algorithm for the tridiagonal heat systems.

The matrices are diagonally dominant M-matrices, so no pivoting is needed.
Compiled with numba when it is importable; the pure-numpy fallback is used
otherwise.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

__all__ = ["solve_tridiagonal"]


def _thomas(lower, diag, upper, rhs):
    # lower[i] couples row i+1 to column i; upper[i] couples row i to i+1
    n = diag.shape[0]
    c = np.empty(n)
    d = np.empty(n)
    x = np.empty(n)
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i - 1] * c[i - 1]
        if i < n - 1:
            c[i] = upper[i] / denom
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


_thomas_fast = njit(cache=True)(_thomas) if njit is not None else _thomas


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the tridiagonal system; off-diagonals have length ``n - 1``."""
    return _thomas_fast(
        np.ascontiguousarray(lower, dtype=np.float64),
        np.ascontiguousarray(diag, dtype=np.float64),
        np.ascontiguousarray(upper, dtype=np.float64),
        np.ascontiguousarray(rhs, dtype=np.float64),
    )
