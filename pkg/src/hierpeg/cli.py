"""``hierpeg`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 archive fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from .abstraction import PartitionError, compute_topology, partition_from_blocks, partition_from_file
from .aggregated_game import AggregationError
from .archive import (
    ArchiveError,
    FingerprintError,
    flat_archive,
    hier_archive,
    inspect_archive,
    load_archive,
    save_archive,
)
from .config import BUILTIN_MAPS, ConfigError, RunConfig, parse_config_text, resolve_map
from .estimators import FlatNashSolver, HierarchicalSolver
from .flat_solver import ConvergenceError
from .gridworld import AgentRole, MapError, PegEnv, parse_map
from .local_games import build_local_game, enumerate_terminal_superstates
from .simulator import run_matchups, write_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_FINGERPRINT = 4

_CONFIG_KEYS = [
    "map", "partition", "blocks", "rooms", "beta", "capture_radius", "slip", "tol", "phi_tol",
    "terminal_mode", "episodes", "seed", "step_cap", "out", "threads", "trajectories",
]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--map", help=f"map file or bundled world ({', '.join(BUILTIN_MAPS)})")
    p.add_argument("--partition", help="partition file (comma-separated labels, -1 on walls)")
    p.add_argument("--blocks", type=int, help="K: group KxK blocks of rooms into one superstate")
    p.add_argument("--rooms", type=int, help="rooms per side, when it cannot be inferred")
    p.add_argument("--beta", type=float)
    p.add_argument("--capture-radius", dest="capture_radius", type=int)
    p.add_argument("--slip", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--phi-tol", dest="phi_tol", type=float)
    p.add_argument("--terminal-mode", dest="terminal_mode", choices=["fixed", "recurring"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker cap (default: $PEG_HIER_THREADS, else all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierpeg", description="Flat and hierarchical solvers for pursuit-evasion grid games.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-flat", help="Shapley value iteration on the full joint game")
    _add_common(p)

    p = sub.add_parser("solve-hier", help="options, local games and the aggregated game")
    _add_common(p)

    p = sub.add_parser("simulate", help="play seeded matchups between archived policies")
    _add_common(p)
    p.add_argument("--flat", help="flat archive (the 'nash' player)")
    p.add_argument("--hier", help="hierarchical archive (the 'hier' player)")
    p.add_argument("--matchups", default=None,
                   help="comma list of P:E pairs, e.g. nash:nash,hier:nash (default: all available)")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--step-cap", dest="step_cap", type=int)
    p.add_argument("--trajectories", type=int, help="export the first N episodes of each matchup")

    p = sub.add_parser("bench", help="LP counts and timings across worlds")
    _add_common(p)
    p.add_argument("--maps", default=",".join(BUILTIN_MAPS), help="comma list of worlds")
    p.add_argument("--solve-limit", dest="solve_limit", type=int, default=100_000,
                   help="only time full solves on worlds with at most this many joint states")

    p = sub.add_parser("inspect", help="dump an archive as text")
    p.add_argument("archive")
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = cfg.replace(**parse_config_text(path.read_text()))
    flags = {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}
    return cfg.replace(**flags).validate()


def make_env(cfg: RunConfig, map_name: str | None = None) -> PegEnv:
    grid = parse_map(resolve_map(map_name or cfg.map))
    return PegEnv(grid, capture_radius=cfg.capture_radius, discount=cfg.beta, slip=cfg.slip)


def make_partition(cfg: RunConfig, env: PegEnv):
    if cfg.partition is not None:
        return partition_from_file(env.map, Path(cfg.partition).read_text())
    return partition_from_blocks(env.map, cfg.blocks, room_grid=cfg.rooms)


def _csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


FLAT_STATS_FIELDS = ["joint_states", "terminal_states", "lp_per_iteration", "iterations",
                     "lp_count", "final_residual", "seconds"]
HIER_STATS_FIELDS = ["phase", "count", "lp_per_iteration", "iterations", "lp_count", "seconds"]
BENCH_FIELDS = ["world", "cells", "joint_states", "terminal_states", "flat_lp_per_iteration",
                "hier_local_max", "hier_aggregated", "hier_lp_per_iteration", "flat_seconds",
                "option_seconds", "local_game_seconds", "abstract_game_seconds"]


def cmd_solve_flat(cfg: RunConfig, out=sys.stdout) -> int:
    env = make_env(cfg)
    solver = FlatNashSolver(tol=cfg.tol).fit(env)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_archive(flat_archive(env, solver.values_, solver.pursuer_policy_, solver.evader_policy_, solver.stats_),
                 outdir / "flat.hpeg")
    st = solver.stats_
    row = {"joint_states": env.n_joint, "terminal_states": int(env.terminal.sum()),
           "lp_per_iteration": st.lp_per_iteration, "iterations": st.iterations,
           "lp_count": st.lp_count, "final_residual": st.final_residual, "seconds": solver.fit_seconds_}
    text = _csv([row], FLAT_STATS_FIELDS)
    (outdir / "flat_stats.csv").write_text(text)
    out.write(text)
    return EXIT_OK


def cmd_solve_hier(cfg: RunConfig, out=sys.stdout) -> int:
    env = make_env(cfg)
    partition = make_partition(cfg, env)
    solver = HierarchicalSolver(tol=cfg.tol, phi_tol=cfg.phi_tol, terminal_mode=cfg.terminal_mode,
                                n_jobs=cfg.thread_count()).fit(env, partition)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_archive(hier_archive(env, solver.policy_, solver.phase_stats_), outdir / "hier.hpeg")
    rows = [dict(phase=name, **{k: d[k] for k in HIER_STATS_FIELDS[1:]})
            for name, d in solver.phase_stats_.items()]
    rows.append({"phase": "total", "count": "", "lp_per_iteration": solver.lp_per_iteration_,
                 "iterations": "", "lp_count": sum(d["lp_count"] for d in solver.phase_stats_.values()),
                 "seconds": sum(d["seconds"] for d in solver.phase_stats_.values())})
    text = _csv(rows, HIER_STATS_FIELDS)
    (outdir / "hier_stats.csv").write_text(text)
    out.write(text)
    return EXIT_OK


def _parse_matchups(text: str | None, available: list[str]) -> list[tuple[str, str]]:
    if text is None:
        order = [("nash", "nash"), ("hier", "nash"), ("nash", "hier"), ("hier", "hier")]
        return [(p, e) for p, e in order if p in available and e in available]
    pairs = []
    for item in text.split(","):
        item = item.strip()
        if item.count(":") != 1:
            raise ConfigError(f"bad matchup {item!r}; expected P:E")
        p, e = item.split(":")
        for name in (p, e):
            if name not in available:
                raise ConfigError(f"matchup uses {name!r} but no such archive was given")
        pairs.append((p, e))
    return pairs


def cmd_simulate(cfg: RunConfig, flat_path: str | None, hier_path: str | None,
                 matchups: str | None, out=sys.stdout) -> int:
    env = make_env(cfg)
    controllers = {}
    for name, path in (("nash", flat_path), ("hier", hier_path)):
        if path is None:
            continue
        if not Path(path).is_file():
            raise ConfigError(f"archive not found: {path}")
        archive = load_archive(path, env)
        controllers[name] = (archive.controller(AgentRole.PURSUER, env), archive.controller(AgentRole.EVADER, env))
    if not controllers:
        raise ConfigError("simulate needs --flat and/or --hier")
    pairs = _parse_matchups(matchups, list(controllers))
    report = run_matchups(env, controllers, pairs, cfg.episodes, base_seed=cfg.seed,
                          step_cap=cfg.step_cap, record=cfg.trajectories > 0)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    text = report.to_csv()
    (outdir / "matchups.csv").write_text(text)
    if cfg.trajectories:
        tdir = outdir / "trajectories"
        tdir.mkdir(exist_ok=True)
        for (p, e), results in report.episodes.items():
            for res in results[: cfg.trajectories]:
                (tdir / f"{p}_vs_{e}_seed{res.seed}.csv").write_text(write_trajectory(res))
    out.write(text)
    return EXIT_OK


def hier_counts(env: PegEnv, partition) -> tuple[int, int]:
    """Per-sweep LP counts of the decomposition without solving it:
    (largest local game, aggregated game)."""
    topo = compute_topology(env, partition)
    keys = enumerate_terminal_superstates(env, partition, topo)
    local_max = 0
    for gamma in keys:
        game = build_local_game(env, partition, topo, gamma).game
        local_max = max(local_max, int(np.count_nonzero(~game.terminal)))
    return local_max, partition.superstate_count ** 2 - len(keys)


def cmd_bench(cfg: RunConfig, maps: list[str], solve_limit: int, out=sys.stdout) -> int:
    rows = []
    for name in maps:
        env = make_env(cfg, name)
        partition = make_partition(cfg, env)
        n_term = int(env.terminal.sum())
        local_max, agg = hier_counts(env, partition)
        row = {"world": name, "cells": env.n_cells, "joint_states": env.n_joint, "terminal_states": n_term,
               "flat_lp_per_iteration": env.n_joint - n_term, "hier_local_max": local_max,
               "hier_aggregated": agg, "hier_lp_per_iteration": local_max + agg,
               "flat_seconds": "", "option_seconds": "", "local_game_seconds": "", "abstract_game_seconds": ""}
        if env.n_joint <= solve_limit:
            t0 = time.perf_counter()
            FlatNashSolver(tol=cfg.tol).fit(env)
            row["flat_seconds"] = time.perf_counter() - t0
            hs = HierarchicalSolver(tol=cfg.tol, phi_tol=cfg.phi_tol, terminal_mode=cfg.terminal_mode,
                                    n_jobs=cfg.thread_count()).fit(env, partition)
            for phase in ("option", "local_game", "abstract_game"):
                row[f"{phase}_seconds"] = hs.phase_stats_[phase]["seconds"]
        rows.append(row)
    text = _csv(rows, BENCH_FIELDS)
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "bench.csv").write_text(text)
    out.write(text)
    return EXIT_OK


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "inspect":
            out.write(inspect_archive(load_archive(args.archive)))
            return EXIT_OK
        cfg = make_config(args)
        if args.command == "solve-flat":
            return cmd_solve_flat(cfg, out)
        if args.command == "solve-hier":
            return cmd_solve_hier(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.flat, args.hier, args.matchups, out)
        if args.command == "bench":
            maps = [m.strip() for m in args.maps.split(",") if m.strip()]
            return cmd_bench(cfg, maps, args.solve_limit, out)
    except FingerprintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ConfigError, MapError, PartitionError, AggregationError, ArchiveError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
