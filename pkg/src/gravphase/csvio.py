"""CSV emission with 17 significant digits so that values round-trip exactly."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_model import ColumnDomain, StateField

__all__ = [
    "SNAPSHOT_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "EQUILIBRIUM_COLUMNS",
    "fmt",
    "snapshot_name",
    "write_snapshot",
    "read_snapshot",
    "CsvTable",
]

SNAPSHOT_COLUMNS = ("z", "theta", "U", "chi", "pressure")
TRAJECTORY_COLUMNS = (
    "t",
    "theta_min", "theta_max", "theta_mean",
    "U_min", "U_max", "U_mean",
    "chi_min", "chi_max", "chi_mean",
    "lyapunov", "entropy_production",
    "rate_theta_t", "rate_U_t", "rate_chi_t", "rate_grad_theta",
    "total_energy", "boundary_flux",
)
EQUILIBRIUM_COLUMNS = ("theta_gamma", "Z", "case", "interface_height", "solid_fraction", "cc_residual")


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


def snapshot_name(t: float) -> str:
    return f"snapshot_{t:.10g}.csv"


def write_snapshot(path: Path, dom: ColumnDomain, state: StateField, pressure: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SNAPSHOT_COLUMNS)
        for row in zip(dom.z_centers, state.theta, state.U, state.chi, pressure):
            writer.writerow([fmt(float(v)) for v in row])


def read_snapshot(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(z, theta, U, chi)`` from a snapshot file."""
    from .config import ConfigError

    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot {path}: {exc.strerror}") from None
    if not rows or tuple(rows[0][:4]) != SNAPSHOT_COLUMNS[:4]:
        raise ConfigError(f"{path}: expected header starting with {', '.join(SNAPSHOT_COLUMNS[:4])}")
    try:
        data = np.array([[float(v) for v in r[:4]] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 2:
        raise ConfigError(f"{path}: need at least two data rows")
    return data[:, 0].copy(), data[:, 1].copy(), data[:, 2].copy(), data[:, 3].copy()


class CsvTable:
    """Row-at-a-time CSV writer that flushes each row (partial output survives failures)."""

    def __init__(self, path: Path, columns: Sequence[str]):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)
        self._fh.flush()

    def write(self, values: Iterable) -> None:
        values = list(values)
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self._writer.writerow([fmt(v) for v in values])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "CsvTable":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

