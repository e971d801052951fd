"""Command line entry point.

Every run writes its artifacts into --out together with `config.ini` (the fully
resolved configuration) and `manifest.json` (seed, version, wall time and the
sha256 of every artifact).  Rerunning with the same config.ini and seed
reproduces the artifacts byte for byte.

Exit codes: 0 ok, 2 usage, 3 invalid configuration, 4 solver failure, 5 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, dumps, load_config, override
from .geometry import GeometryError, build_gain_table
from .mfg import MfgDivergence, MfgInstability, lemma2_diagnostic, monotonicity_diagnostic, solve_mfg
from .payoff import build_payoff_tables
from .qp import InfeasibleBudget
from .simulation import SweepError, compare_mfg_vs_mdp, evaluate_policies, sweep, write_reports_csv
from .stackelberg import run_baseline
from .stochastic_game import EnumerationBudgetExceeded, SolverError, deviation_report, run_policy, solve_equilibrium

log = logging.getLogger("harvestgame")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
COMMANDS = ("solve-stochastic", "solve-mfg", "baseline", "simulate", "sweep", "compare")


def _version():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=os.path.dirname(os.path.abspath(__file__)), timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands; each returns the list of artifact file names it wrote


def _solve_stochastic(cfg: ExperimentConfig, out, seed, workers):
    sc = cfg.scenario
    gains = build_gain_table(sc.topology())
    gc = sc.game_config(gains)
    tables = build_payoff_tables(gc)
    sol = solve_equilibrium(tables, gc, sc.mode, budget=sc.enumeration_budget, seed=seed,
                            epsilon=cfg.run.epsilon, workers=workers)
    rep = deviation_report(sol, tables, gc)
    tables.write_csv(os.path.join(out, "payoff_tables.csv"), gc)
    sol.write_csv(os.path.join(out, "equilibrium.csv"), gc)
    run_policy(sol, gc, cfg.run.horizon, seed=seed, tables=tables).write_csv(os.path.join(out, "trajectory.csv"))
    _write_json(os.path.join(out, "summary.json"), {
        "mode": sol.mode, "gap": sol.gap, "ces_value": float(gc.initial_state_dist @ sol.ces_values),
        "candidates_checked": sol.candidates_checked, "equilibria_found": sol.equilibria_found,
        "mbs_deviation_gain": rep["mbs_deviation_gain"], "ces_bellman_residual": rep["ces_bellman_residual"],
    })
    return ["payoff_tables.csv", "equilibrium.csv", "trajectory.csv", "summary.json"]


def _solve_mfg(cfg: ExperimentConfig, out, seed, workers):
    grid = solve_mfg(cfg.mfg)
    grid.write_csv(os.path.join(out, "mfg_grid.csv"), cfg.mfg)
    grid.write_mean_power_csv(os.path.join(out, "mfg_mean_power.csv"), cfg.mfg)
    lem = lemma2_diagnostic(grid, cfg.mfg)
    mono = monotonicity_diagnostic(grid, cfg.mfg)
    _write_json(os.path.join(out, "summary.json"), {
        "iterations": grid.iterations, "converged": grid.converged, "residual": grid.residual,
        "energy_balance_max": lem["max"], "energy_balance_l2": lem["l2"],
        "monotonicity": {k: v for k, v in mono.items() if np.isscalar(v)},
    })
    return ["mfg_grid.csv", "mfg_mean_power.csv", "summary.json"]


def _baseline(cfg: ExperimentConfig, out, seed, workers):
    sc = cfg.scenario
    traj = run_baseline(build_gain_table(sc.topology()), sc.baseline_config(), cfg.run.horizon, seed=seed)
    traj.write_csv(os.path.join(out, "baseline_trajectory.csv"))
    return ["baseline_trajectory.csv"]


def _simulate(cfg: ExperimentConfig, out, seed, workers):
    reports = evaluate_policies(("stochastic", "stackelberg"), cfg.scenario, cfg.run.slots,
                                cfg.run.replications, seed, pin_topology=cfg.run.pin_topology)
    write_reports_csv(os.path.join(out, "outage.csv"), reports)
    return ["outage.csv"]


def _sweep(cfg: ExperimentConfig, out, seed, workers):
    sweep(cfg.run.sweep_parameter, cfg.run.sweep_values, cfg.scenario, slots=cfg.run.slots,
          replications=cfg.run.replications, seed=seed, pin_topology=cfg.run.pin_topology,
          out_csv=os.path.join(out, "sweep.csv"))
    return ["sweep.csv"]


def _compare(cfg: ExperimentConfig, out, seed, workers):
    compare_mfg_vs_mdp(cfg.run.compare_m, cfg.mfg, cfg.mdp, out_csv=os.path.join(out, "compare.csv"))
    return ["compare.csv"]


HANDLERS = {"solve-stochastic": _solve_stochastic, "solve-mfg": _solve_mfg, "baseline": _baseline,
            "simulate": _simulate, "sweep": _sweep, "compare": _compare}


def build_parser():
    ap = argparse.ArgumentParser(prog="harvestgame", description="Energy-harvesting HetNet power control games.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="INI file; omitted keys use defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", metavar="DIR", default=".")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--mode", choices=("enumerate", "bri", "incremental"))
    return ap


def run(command, cfg: ExperimentConfig, out, seed=0, workers=1):
    """Run one subcommand and write artifacts plus config.ini and manifest.json; returns the manifest."""
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    files = HANDLERS[command](cfg, out, seed, workers)
    wall = time.perf_counter() - t0
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(dumps(cfg))
    manifest = {
        "command": command, "seed": seed, "workers": workers, "version": _version(),
        "config": cfg.snapshot(), "wall_time_s": wall,
        "artifacts": {f: _sha256(os.path.join(out, f)) for f in files + ["config.ini"]},
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    return manifest


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.mode:
            cfg = override(cfg, **{"game.mode": args.mode})
        if args.workers < 1:
            raise ConfigError(f"--workers: must be >= 1, got {args.workers}")
    except ConfigError as exc:
        print(f"harvestgame: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"harvestgame: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        manifest = run(args.command, cfg, args.out, args.seed, args.workers)
    except (SolverError, MfgDivergence, MfgInstability, SweepError, InfeasibleBudget, GeometryError) as exc:
        hint = ""
        if isinstance(exc, EnumerationBudgetExceeded):
            hint = " (use --mode incremental or raise game.enumeration_budget)"
        print(f"harvestgame: {args.command} failed: {type(exc).__name__}: {exc}{hint}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"harvestgame: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s finished in %.2f s", args.command, manifest["wall_time_s"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
