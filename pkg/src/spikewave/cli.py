"""Command line entry point: ``spikewave <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, harness, swp
from .envsim import build_park_env, calibrate, load_env, save_env
from .errors import InputError, UnreachableError
from .harness import ExperimentConfig
from .lattice import combine_layers, parse_layer_selection, read_costmap
from .stats import build_table, paths_from_csv

log = logging.getLogger("spikewave")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = harness.parse_config(Path(args.config).read_text())
    if args.seed is not None:
        cfg = harness.with_overrides(cfg, seed=args.seed)
    return cfg


def cmd_gen_env(args) -> int:
    seed = 0 if args.seed is None else args.seed
    env = build_park_env(seed, width=args.width, height=args.height)
    save_env(env, args.out)
    print(f"wrote {args.out}: {env.grid.width}x{env.grid.height}, "
          f"{env.grid.node_count} traversable cells")
    return 0


def cmd_calibrate(args) -> int:
    env = load_env(args.env)
    norms = calibrate(env, args.n, np.random.default_rng(0 if args.seed is None else args.seed))
    text = harness.format_norms(norms)
    Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_learn(args) -> int:
    env = load_env(args.env)
    cfg = _config(args)
    norms = harness.parse_norms(Path(args.norms).read_text()) if args.norms else None
    res = harness.run_learning(cfg, env, norms=norms, out_dir=args.out)
    counts = {s: sum(t.status == s for t in res.trials) for s in ("reached", "failed", "unreachable")}
    print(f"{len(res.trials)} trials: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    if len(res.mse) > 2:
        print(f"spearman(trial, mse) = {res.spearman():.4f}")
    return 0


def cmd_plan(args) -> int:
    layers = read_costmap(args.costmap)
    selection = parse_layer_selection(args.layers)
    combined = combine_layers(layers, selection)
    start, goal = harness.parse_node(args.start), harness.parse_node(args.goal)
    if args.planner == "swp":
        path = swp.plan(combined, start, goal)
    elif args.planner == "astar":
        path = baselines.astar_euclidean(combined, start, goal)
    elif args.planner == "rrtstar":
        seed = 0 if args.seed is None else args.seed
        path = baselines.rrt_star(combined, start, goal, baselines.RrtParams(seed=seed))
    else:
        path = baselines.naive_path(combined.grid, start, goal)
    m = baselines.path_metrics(combined, layers, path)
    print(" ".join(f"{r},{c}" for r, c in path))
    print(f"hops {m.hops}  length_m {m.length_m:.3f}  cost_normalized {m.normalized_cost}  "
          + "  ".join(f"cost_{k} {v}" for k, v in m.layer_costs.items()))
    return 0


def cmd_adapt(args) -> int:
    env = load_env(args.env)
    layers = read_costmap(args.costmap)
    cfg = _config(args)
    obstacle = harness.parse_node(args.obstacle)
    if (args.start is None) != (args.goal is None):
        raise InputError("--from and --to go together")
    if args.start is None:
        start, goal = harness.find_adaptation_task(layers, obstacle, selection=cfg.layers)
    else:
        start, goal = harness.parse_node(args.start), harness.parse_node(args.goal)
    res = harness.adaptation_scenario(env, layers, start, goal, obstacle, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths_csv, deltas_csv = harness.adaptation_csvs(res)
    (out / "paths.csv").write_text(paths_csv)
    (out / "deltas.csv").write_text(deltas_csv)
    for u, path in enumerate(res.paths):
        mark = "through obstacle" if obstacle in path else "avoids obstacle"
        print(f"update {u}: {' '.join(f'{r},{c}' for r, c in path)}  ({mark})")
    for u in range(len(res.deltas)):
        print(f"largest change after update {u + 1}: {res.largest_change_node(u)}")
    return 0


def cmd_evaluate(args) -> int:
    layers = read_costmap(args.costmap)
    cfg = _config(args)
    if args.mode == "sampled":
        if not args.env:
            raise InputError("sampled evaluation needs --env")
        ev = harness.evaluate_sampled(load_env(args.env), layers, cfg)
    else:
        ev = harness.evaluate_exhaustive(layers, cfg)
    ev.write(args.out)
    print(f"{ev.n_pairs} pairs")
    print(ev.table.format())
    return 0


def cmd_stats(args) -> int:
    records = paths_from_csv(Path(args.paths).read_text())
    if not records:
        raise InputError("paths file has no records")
    print(build_table(records, args.reference).format())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for all randomness")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="spikewave", parents=[common],
                                 description="Spiking wavefront planning with online cost learning.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", parents=[common], help="generate a park environment")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=17)
    p.add_argument("--height", type=int, default=17)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("calibrate", parents=[common], help="derive normalization bounds")
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("learn", parents=[common], help="run the exploration and learning loop")
    p.add_argument("--env", required=True)
    p.add_argument("--config")
    p.add_argument("--norms", help="bounds from 'calibrate'; calibrates afresh if omitted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("plan", parents=[common], help="plan one path on a costmap")
    p.add_argument("--costmap", required=True)
    p.add_argument("--layers", default="all")
    p.add_argument("--from", dest="start", required=True, metavar="R,C")
    p.add_argument("--to", dest="goal", required=True, metavar="R,C")
    p.add_argument("--planner", choices=harness.PLANNERS, default="swp")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("adapt", parents=[common], help="obstacle injection and replanning")
    p.add_argument("--env", required=True)
    p.add_argument("--costmap", required=True)
    p.add_argument("--obstacle", required=True, metavar="R,C")
    p.add_argument("--from", dest="start", metavar="R,C")
    p.add_argument("--to", dest="goal", metavar="R,C")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", parents=[common], help="compare planners")
    p.add_argument("--costmap", required=True)
    p.add_argument("--env")
    p.add_argument("--mode", choices=("exhaustive", "sampled"), default="exhaustive")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", parents=[common], help="comparison table from a paths file")
    p.add_argument("--paths", required=True)
    p.add_argument("--reference", default="swp")
    p.set_defaults(func=cmd_stats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed = getattr(args, "seed", None)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UnreachableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
