"""Command-line experiment runner.

    stochhinf solve   --config cfg.json [--out DIR]
    stochhinf learn   --config cfg.json [--out DIR] [--seed N] [--mode exact|montecarlo]
    stochhinf robust  --config cfg.json [--out DIR]
    stochhinf simulate --config cfg.json [--out DIR] [--seed N]
    stochhinf print-schema

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import CONFIG_SCHEMA, ExperimentConfig, dumps, initial_gains, learn_intervals, load_config
from .errors import ConfigError, NumericalError
from .gare import PolicyPair, find_initial_P, gains_from_P, is_stabilizing, run_alg1
from .offpolicy import LearnConfig, run_learning
from .robust import iss_sweep, plateaus, write_sweep_csv
from .sde import _atomic_write, ms_decay_probe, simulate_batch

log = logging.getLogger("stochhinf")

CSV_SCHEMAS = {
    "spu_trace.csv": ["i", "residual_norm", "error_to_ref"],
    "learn_trace.csv": ["i", "p_error", "l_error", "f_error", "ls_residual"],
    "iss_sweep.csv": ["delta", "seed", "iteration", "error_norm"],
    "iss_plateaus.csv": ["delta", "plateau"],
    "ms_decay.csv": ["t", "mean_sq_norm"],
    "batch/times.csv": ["step", "t"],
    "batch/states.csv": ["path", "step", "x0", "...", "x{n-1}"],
    "batch/controls.csv": ["path", "step", "u0", "...", "u{m-1}"],
    "batch/disturbances.csv": ["path", "step", "v0", "...", "v{p-1}"],
    "data/<matrix>.csv": ["row", "c0", "...", "c{cols-1}"],
}


def _g(v) -> str:
    return format(float(v), ".17g")


def _write_rows(path: Path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(r) for r in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _solve(cfg: ExperimentConfig):
    s = cfg.solve
    if s["init"] == "given":
        return run_alg1(cfg.model, s["P0"], s["max_iter"], s["tol"], cfg.P_ref)
    P0, _ = find_initial_P(cfg.model, max_iter=s["max_iter"], tol=s["tol"])
    return run_alg1(cfg.model, P0, s["max_iter"], s["tol"], cfg.P_ref)


def cmd_solve(cfg: ExperimentConfig, out: Path) -> int:
    trace = _solve(cfg)
    rows = []
    for it in trace.iterates:
        err = "" if it.error_to_ref is None else _g(it.error_to_ref)
        rows.append([str(it.i), _g(it.residual_norm), err])
    _write_rows(out / "spu_trace.csv", CSV_SCHEMAS["spu_trace.csv"], rows)
    fin = trace.final
    result = {
        "P": fin.P,
        "L": fin.gains.L,
        "F": fin.gains.F,
        "residual_norm": fin.residual_norm,
        "iterations": fin.i,
        "stabilizing": is_stabilizing(cfg.model, fin.P),
        "iterates": [it.P for it in trace.iterates],
    }
    _atomic_write(out / "P_star.json", dumps(result))
    print(f"SPU converged in {fin.i} iterations, |F(P)|_F = {fin.residual_norm:.3e}")
    print(np.array2string(fin.P, precision=6))
    if fin.error_to_ref is not None:
        print(f"distance to reference P: {fin.error_to_ref:.3e}")
    return 0


def cmd_learn(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.learn is None:
        raise ConfigError("learn", "missing")
    lb = cfg.learn
    gains0 = initial_gains(cfg)
    lc = LearnConfig(
        gains0=gains0,
        N=lb["N"],
        intervals=learn_intervals(cfg),
        sim=cfg.sim,
        mode=lb["mode"],
        sampling=lb["sampling"],
        rule=lb["rule"],
        stop_tol=lb["stop_tol"],
        P0_hat=lb["P0"],
    )
    trace = run_learning(cfg.model, lc, audit=True)
    print(trace.rank.summary())
    P_ref = cfg.P_ref
    if P_ref is None:
        P_ref = _solve(cfg).P
    ref = gains_from_P(cfg.model, P_ref)
    trace.to_csv(out / "learn_trace.csv", P_ref, ref.L, ref.F)
    if trace.batch is not None:
        if isinstance(trace.batch, list):
            for j, seg in enumerate(trace.batch):
                seg.to_csv(out / "batch" / f"segment_{j:03d}")
        else:
            trace.batch.to_csv(out / "batch")
    trace.data.to_csv(out / "data")
    result = {
        "P_hat": trace.P,
        "L_hat": trace.L,
        "F_hat": trace.F,
        "mode": lb["mode"],
        "seed": cfg.sim.seed,
        "iterates": [it.P for it in trace.iterates[1:]],
        "P_ref": P_ref,
    }
    _atomic_write(out / "P_hat.json", dumps(result))
    print(f"learned P after {len(trace.iterates) - 1} iterations, |P_hat - P_ref|_F = {np.linalg.norm(trace.P - P_ref):.3e}")
    return 0


def cmd_robust(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.robust is None:
        raise ConfigError("robust", "missing")
    rb = cfg.robust
    P_star = cfg.P_ref if cfg.P_ref is not None else _solve(cfg).P
    results = iss_sweep(cfg.model, P_star, rb["deltas"], rb["seeds"], rb["N"], rb["rho"], rb["kind"], rb["rate"])
    write_sweep_csv(results, out / "iss_sweep.csv")
    plat = plateaus(results)
    _write_rows(out / "iss_plateaus.csv", CSV_SCHEMAS["iss_plateaus.csv"], [[_g(d), _g(v)] for d, v in plat.items()])
    for d, v in plat.items():
        print(f"delta {d:.3e}: plateau {v:.3e}")
    return 0


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    if cfg.sim is None:
        raise ConfigError("sim", "missing")
    gains = initial_gains(cfg) if cfg.learn is not None else PolicyPair.zeros(*cfg.dims)
    batch = simulate_batch(cfg.model, gains, cfg.sim)
    batch.to_csv(out / "batch")
    curve = ms_decay_probe(batch)
    _write_rows(out / "ms_decay.csv", CSV_SCHEMAS["ms_decay.csv"], [[_g(t), _g(v)] for t, v in curve])
    print(f"simulated {batch.n_paths} paths, mean |x|^2: {curve[0, 1]:.4g} -> {curve[-1, 1]:.4g}")
    return 0


def cmd_print_schema() -> int:
    print(json.dumps({"config": CONFIG_SCHEMA, "csv": CSV_SCHEMAS}, indent=2))
    return 0


COMMANDS = {"solve": cmd_solve, "learn": cmd_learn, "robust": cmd_robust, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochhinf", description="Stochastic H-infinity control by SPU and off-policy learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--print-schema", action="store_true", help="print config and CSV schemas and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None)
        if name in ("learn", "simulate"):
            p.add_argument("--seed", type=int, default=None, help="overrides sim.seed")
        if name == "learn":
            p.add_argument("--mode", choices=("exact", "montecarlo"), default=None)
    sub.add_parser("print-schema")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.print_schema or args.command == "print-schema":
        return cmd_print_schema()
    if args.command is None:
        parser.print_help()
        return 2
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            if cfg.sim is None:
                raise ConfigError("sim", "--seed given but the config has no sim block")
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed", "must be an unsigned 64-bit integer")
            cfg.sim = replace(cfg.sim, seed=args.seed)
        if getattr(args, "mode", None) is not None:
            if cfg.learn is None:
                raise ConfigError("learn", "--mode given but the config has no learn block")
            cfg.learn["mode"] = args.mode
        out = args.out if args.out is not None else cfg.output
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
