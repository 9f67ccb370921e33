"""Command line: ``gravphase simulate|equilibrium|verify CONFIG``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, build_initial_state, load_config
from .core_model import ModelError
from .csvio import EQUILIBRIUM_COLUMNS, TRAJECTORY_COLUMNS, CsvTable, snapshot_name, write_snapshot
from .diagnostics import gradient_norm_sq
from .equilibrium import (
    INTERFACE,
    clausius_clapeyron_residual,
    solve_equilibrium,
    zero_gravity_equilibrium_set,
)
from .evolution import column_operators, run
from .thermo import extended_energy, pressure_field, total_energy
from .verify import FAIL, format_table, run_checks

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("gravphase")


def cmd_simulate(cfg: RunConfig, out_dir: Path | None = None) -> int:
    """Run the configured simulation, streaming ``trajectory.csv`` and snapshots."""
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.params
    dom = cfg.domain()
    state0 = build_initial_state(cfg, dom)
    exchange = _exchange(cfg, dom)
    prev: list = []

    with CsvTable(out / "trajectory.csv", TRAJECTORY_COLUMNS) as table:

        def observer(state, report):
            if prev and state.t > prev[0].t:
                theta_t = (state.theta - prev[0].theta) / (state.t - prev[0].t)
            else:
                theta_t = np.zeros_like(state.theta)
            prev[:] = [state]
            table.write([
                state.t,
                state.theta.min(), state.theta.max(), dom.mean(state.theta),
                state.U.min(), state.U.max(), dom.mean(state.U),
                state.chi.min(), state.chi.max(), dom.mean(state.chi),
                extended_energy(state, p, dom),
                report.entropy_production,
                math.sqrt(dom.integrate(theta_t**2)),
                math.sqrt(dom.integrate(report.U_t**2)),
                math.sqrt(dom.integrate(report.chi_t**2)),
                math.sqrt(gradient_norm_sq(state.theta, dom)),
                total_energy(state, p, dom),
                float(np.dot(exchange, p.theta_gamma - state.theta)),
            ])
            write_snapshot(out / snapshot_name(state.t), dom, state, pressure_field(state, report.U_t, p, dom))

        # samples are not needed here; keep only the endpoints in memory
        result = run(state0, cfg.stepper, p, dom, observer=observer, stride=cfg.sample_stride,
                     sample_stride=10**12)
    if result.failed:
        log.error("simulation stopped after %d steps: %s", result.n_steps, result.message)
        return EXIT_NUMERICAL
    log.info("completed %d steps to t=%.6g; output in %s", result.n_steps, result.state.t, out)
    return EXIT_OK


def _exchange(cfg: RunConfig, dom) -> np.ndarray:
    return column_operators(cfg.params, dom).exchange


def parse_sweep(text: str) -> np.ndarray:
    """``lo:hi:n`` -> ``n`` equally spaced temperatures."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--sweep expects lo:hi:n, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--sweep expects lo:hi:n, got {text!r}") from None
    if n < 1 or not (lo > 0 and hi > 0):
        raise ConfigError("--sweep needs positive temperatures and n >= 1")
    return np.linspace(lo, hi, n)


def cmd_equilibrium(
    cfg: RunConfig,
    theta_sweep: Sequence[float] | None = None,
    zero_gravity: bool = False,
    out_dir: Path | None = None,
) -> int:
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.params
    dom = cfg.domain()
    sweep = [p.theta_gamma] if theta_sweep is None else list(theta_sweep)
    if zero_gravity:
        return _zero_gravity_table(cfg, dom, sweep, out)
    if p.g == 0:
        raise ConfigError("g = 0: equilibria are not unique; pass --zero-gravity")
    with CsvTable(out / "equilibrium.csv", EQUILIBRIUM_COLUMNS) as table:
        for theta_g in sweep:
            sol = solve_equilibrium(p, dom, theta_g)
            cc = clausius_clapeyron_residual(p, dom, sol) if sol.case_tag == INTERFACE else math.nan
            table.write([theta_g, sol.Z, sol.case_tag, sol.interface_height, sol.solid_fraction, cc])
    log.info("interface window [%.12g, %.12g]; wrote %d rows", sol.theta_lower, sol.theta_upper, len(sweep))
    return EXIT_OK


def _zero_gravity_table(cfg: RunConfig, dom, sweep, out: Path) -> int:
    p = cfg.params.with_(g=0.0)
    columns = ("theta_gamma", "regime", "unique", "solid_fraction", "theta_low", "theta_high")
    witnesses = None
    with CsvTable(out / "equilibrium.csv", columns) as table:
        for theta_g in sweep:
            zg = zero_gravity_equilibrium_set(p, dom, theta_g)
            table.write([theta_g, zg.regime, zg.unique, zg.solid_fraction, *zg.theta_interval])
            if not zg.unique and witnesses is None:
                witnesses = (theta_g, zg.witnesses)
    if witnesses is not None:
        theta_g, fields = witnesses
        cols = ["z"] + [f"chi_{i}" for i in range(len(fields))]
        with CsvTable(out / "zero_gravity_witnesses.csv", cols) as table:
            for row in zip(dom.z_centers, *fields):
                table.write([float(v) for v in row])
        log.info("non-unique equilibria at theta_gamma=%.12g; witnesses written", theta_g)
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    checks, numerical = run_checks(cfg)
    print(format_table(checks))
    if numerical:
        return EXIT_NUMERICAL
    return EXIT_VERIFY if any(c.status == FAIL for c in checks) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gravphase", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation and write CSV output")
    sim.add_argument("config", type=Path)
    sim.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")

    eq = sub.add_parser("equilibrium", help="equilibrium table over a temperature sweep")
    eq.add_argument("config", type=Path)
    eq.add_argument("--sweep", help="lo:hi:n boundary temperatures")
    eq.add_argument("--zero-gravity", action="store_true", help="describe the admissible set for g = 0")
    eq.add_argument("--out", type=Path)

    ver = sub.add_parser("verify", help="run the property checks and print a table")
    ver.add_argument("config", type=Path)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "equilibrium":
            sweep = parse_sweep(args.sweep) if args.sweep else None
            return cmd_equilibrium(cfg, sweep, args.zero_gravity, args.out)
        return cmd_verify(cfg)
    except (ConfigError, ModelError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
