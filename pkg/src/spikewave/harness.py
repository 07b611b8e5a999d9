"""Experiment orchestration: online learning, adaptation and planner comparisons."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import baselines, swp
from .baselines import PathCoster, RrtParams
from .envsim import (EnvironmentModel, build_park_env, calibrate, execute_path, levy_goal,
                     segment_mean)
from .eprop import LEARNING_RATE, apply_traversal_update, layers_mse, normalize_cost
from .errors import InputError, UnreachableError
from .lattice import (LAYER_NAMES, OFFSETS, SENSED_LAYERS, CostLayerSet, DelayField, GridSpec, NodeId,
                      NormalizationParams, chebyshev, combine_layers, parse_layer_selection,
                      write_costmap)
from .stats import (ComparisonTable, PathRecord, build_table, paths_to_csv, trend_rows)

log = logging.getLogger(__name__)

PLANNERS = ("swp", "astar", "rrtstar", "naive")


@dataclass
class ExperimentConfig:
    env_seed: int = 0
    seed: int = 0
    trials: int = 350
    delta: float = LEARNING_RATE
    tau: float = swp.TAU
    beta: float = swp.BETA
    layers: tuple[str, ...] = LAYER_NAMES
    min_separation: int = 3
    sampled_paths: int = 25
    rrt_iterations: int = 2000
    rrt_rewire_radius: int = 2
    rrt_goal_bias: float = 0.1
    calibration_segments: int = 200
    start: tuple[int, int] | None = None
    output_dir: str | None = None

    def __post_init__(self):
        self.layers = tuple(parse_layer_selection(self.layers))
        if self.trials < 0:
            raise InputError("trials must be non-negative")
        if self.min_separation < 1:
            raise InputError("min_separation must be at least 1")
        if self.sampled_paths < 1:
            raise InputError("sampled_paths must be at least 1")

    def rrt_params(self, seed: int) -> RrtParams:
        return RrtParams(self.rrt_iterations, self.rrt_rewire_radius, self.rrt_goal_bias, seed)


def _coerce(name: str, text: str):
    if name == "layers":
        return tuple(parse_layer_selection(text))
    if name == "start":
        return None if text.lower() == "none" else parse_node(text)
    if name == "output_dir":
        return None if text.lower() == "none" else text
    if name in ("delta", "tau", "beta", "rrt_goal_bias"):
        return float(text)
    return int(text)


def parse_config(text: str) -> ExperimentConfig:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise InputError(f"config line {lineno}: unknown or malformed entry {raw!r}")
        try:
            values[key] = _coerce(key, value.strip())
        except ValueError as exc:
            raise InputError(f"config line {lineno}: {exc}") from None
    return ExperimentConfig(**values)


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if f.name == "layers":
            v = ",".join(v)
        elif f.name == "start" and v is not None:
            v = f"{v[0]},{v[1]}"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def parse_node(text: str) -> NodeId:
    try:
        r, c = (int(x) for x in text.replace(":", ",").split(","))
    except ValueError:
        raise InputError(f"expected ROW,COL, got {text!r}") from None
    return (r, c)


def default_start(grid: GridSpec) -> NodeId:
    """Traversable cell closest to the grid centre."""
    centre = ((grid.height - 1) / 2, (grid.width - 1) / 2)
    return min(grid.nodes(), key=lambda n: ((n[0] - centre[0]) ** 2 + (n[1] - centre[1]) ** 2, n))


# --- learning ---------------------------------------------------------------

@dataclass
class TrialLog:
    trial: int
    start: NodeId
    goal: NodeId
    status: str           # reached | failed | unreachable
    hops: int = 0
    goal_arrival: int = -1
    failed_at: NodeId | None = None


@dataclass
class LearningResult:
    layers: CostLayerSet
    mse: list[float]
    trials: list[TrialLog]
    snapshots: list[CostLayerSet] = field(repr=False, default_factory=list)
    visits: np.ndarray | None = field(repr=False, default=None)  # successful arrivals per cell

    def mse_csv(self) -> str:
        return "trial,mse\n" + "".join(f"{i},{m:.9f}\n" for i, m in enumerate(self.mse))

    def trials_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "start", "goal", "status", "hops", "goal_arrival", "failed_at"])
        for t in self.trials:
            w.writerow([t.trial, f"{t.start[0]}:{t.start[1]}", f"{t.goal[0]}:{t.goal[1]}", t.status,
                        t.hops, t.goal_arrival,
                        "" if t.failed_at is None else f"{t.failed_at[0]}:{t.failed_at[1]}"])
        return buf.getvalue()

    def spearman(self) -> float:
        rho = sps.spearmanr(np.arange(len(self.mse)), self.mse).statistic
        return float(rho)


def run_learning(config: ExperimentConfig, env: EnvironmentModel | None = None,
                 norms: dict[str, NormalizationParams] | None = None,
                 out_dir: str | Path | None = None) -> LearningResult:
    """Explore by Lévy-flight goals, plan with the wave, drive, learn; once per trial.

    With ``out_dir`` the layers are written to ``trial_XXXX.costmap`` after the
    initial state and every trial, plus ``mse.csv`` and ``trials.csv``.
    """
    env = build_park_env(config.env_seed) if env is None else env
    grid = env.grid
    rng = np.random.default_rng(config.seed)
    if norms is None:
        norms = calibrate(env, config.calibration_segments, rng)
    layers = CostLayerSet.fresh(grid, norms)
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_costmap(layers, out / "trial_0000.costmap")
    snapshots = [layers.copy()]
    logs: list[TrialLog] = []
    visits = np.zeros(grid.shape, dtype=np.int64)
    here = grid.check_node(config.start) if config.start is not None else default_start(grid)
    for trial in range(1, config.trials + 1):
        goal = levy_goal(grid, here, rng)
        combined = combine_layers(layers, config.layers)
        try:
            wave = swp.propagate(combined, here, goal, beta=config.beta, tau=config.tau)
        except UnreachableError:
            log.info("trial %d: %s unreachable from %s, skipped", trial, goal, here)
            logs.append(TrialLog(trial, here, goal, "unreachable"))
        else:
            path = swp.extract_path(wave)
            record = execute_path(env, path, rng)
            apply_traversal_update(layers, record, wave, config.delta)
            for seg in record.segments:
                visits[seg.dst] += seg.success
            if record.reached_goal:
                logs.append(TrialLog(trial, here, goal, "reached", len(path) - 1, wave.goal_arrival))
                here = goal
            else:
                failed = record.segments[-1]
                logs.append(TrialLog(trial, here, goal, "failed", len(path) - 1,
                                     wave.goal_arrival, failed.dst))
                here = failed.src  # robot backs off to the last waypoint it reached
        snapshots.append(layers.copy())
        if out is not None:
            write_costmap(layers, out / f"trial_{trial:04d}.costmap")
    final = snapshots[-1]
    mse = [layers_mse(s, final) for s in snapshots]
    result = LearningResult(layers, mse, logs, snapshots, visits)
    if out is not None:
        write_costmap(layers, out / "final.costmap")
        (out / "mse.csv").write_text(result.mse_csv())
        (out / "trials.csv").write_text(result.trials_csv())
    return result


def ground_truth_recovery(env: EnvironmentModel, passes: int = 50, delta: float = LEARNING_RATE,
                          seed: int = 0, calibration_segments: int = 2000,
                          tolerance: float = 1.0) -> dict[str, float]:
    """Drive every directed segment ``passes`` times and score the learned delays.

    Each pass visits all segments in a fresh random order, planning every
    one-hop trip with the wave so eligibilities come from a real propagation.
    Returns, per sensed layer, the fraction of edges whose learned delay lies
    within ``tolerance`` of the normalized noise-free model mean.
    """
    grid = env.grid
    rng = np.random.default_rng(seed)
    norms = calibrate(env, calibration_segments, rng)
    layers = CostLayerSet.fresh(grid, norms)
    segments = [(a, (a[0] + dr, a[1] + dc)) for a in grid.nodes()
                for k, (dr, dc) in enumerate(OFFSETS) if grid.edge_mask[a][k]]
    combined = combine_layers(layers, LAYER_NAMES)  # one-hop plans never depend on the map
    for _ in range(passes):
        for i in rng.permutation(len(segments)):
            a, b = segments[i]
            wave = swp.propagate(combined, a, b)
            apply_traversal_update(layers, execute_path(env, [a, b], rng), wave, delta)
    hits = {name: [] for name in SENSED_LAYERS}
    for a, b in segments:
        k = int(np.flatnonzero([(b[0] + dr, b[1] + dc) == a for dr, dc in OFFSETS])[0])
        mean = segment_mean(env, a, b)
        for name in SENSED_LAYERS:
            target = normalize_cost(mean[name], norms[name])
            hits[name].append(abs(layers[name].values[b[0], b[1], k] - target) <= tolerance)
    return {name: float(np.mean(v)) for name, v in hits.items()}


# --- adaptation -------------------------------------------------------------

@dataclass
class AdaptationResult:
    start: NodeId
    goal: NodeId
    obstacle: NodeId
    paths: list[list[NodeId]]
    deltas: list[np.ndarray]   # per update: summed |change| over layers, (H, W, 8)
    layers: CostLayerSet

    def largest_change_node(self, update: int) -> NodeId:
        d = np.nan_to_num(self.deltas[update], nan=-1.0)
        r, c, _ = np.unravel_index(int(np.argmax(d)), d.shape)
        return (int(r), int(c))


def find_adaptation_task(layers: CostLayerSet, obstacle: NodeId, visits: np.ndarray | None = None,
                         selection=LAYER_NAMES, min_separation: int = 3) -> tuple[NodeId, NodeId]:
    """A start/goal pair whose planned path runs through ``obstacle``.

    Candidates are ranked by how well explored their path is (fewest
    ``visits`` along it, when given), then by how close to the goal the
    obstacle sits, then by separation. Remaining ties go to row-major order.
    """
    combined = combine_layers(layers, selection)
    grid = layers.grid
    obstacle = grid.check_node(obstacle)
    best, best_key = None, None
    for s in grid.nodes():
        if s == obstacle:
            continue
        wave = swp.flood(combined, s)
        for g in grid.nodes():
            if g in (s, obstacle) or not wave.spiked(g) or chebyshev(s, g) < min_separation:
                continue
            path = swp.extract_path(wave, g)
            if obstacle not in path:
                continue
            explored = 0 if visits is None else min(int(visits[n]) for n in path)
            tail = len(path) - 1 - path.index(obstacle)
            key = (explored, -tail, chebyshev(s, g))
            if best_key is None or key > best_key:
                best, best_key = (s, g), key
    if best is None:
        raise InputError(f"no planned path passes through {obstacle}")
    return best


def choose_adaptation_task(layers: CostLayerSet, visits: np.ndarray,
                           selection=LAYER_NAMES) -> tuple[NodeId, NodeId, NodeId]:
    """(start, goal, obstacle) with the obstacle on the busiest cell some plan runs through."""
    grid = layers.grid
    order = sorted(grid.nodes(), key=lambda n: (-int(visits[n]), n))
    for obstacle in order:
        try:
            s, g = find_adaptation_task(layers, obstacle, visits, selection)
        except InputError:
            continue
        return s, g, obstacle
    raise InputError("no planned path has an interior cell")


def adaptation_scenario(env: EnvironmentModel, layers: CostLayerSet, start: NodeId, goal: NodeId,
                        obstacle: NodeId, config: ExperimentConfig | None = None,
                        updates: int = 2, obstacle_strength: float = 1.0) -> AdaptationResult:
    """Drop an obstacle on the planned path and replan after each of ``updates`` traversals."""
    config = config or ExperimentConfig()
    layers = layers.copy()
    grid = layers.grid
    start, goal, obstacle = grid.check_node(start), grid.check_node(goal), grid.check_node(obstacle)
    wave = swp.propagate(combine_layers(layers, config.layers), start, goal,
                         beta=config.beta, tau=config.tau)
    paths = [swp.extract_path(wave)]
    if obstacle not in paths[0] or obstacle in (start, goal):
        raise InputError(f"obstacle {obstacle} is not an interior node of the initial path")
    changed = env.copy()
    changed.obstacle_strength[obstacle] = obstacle_strength
    rng = np.random.default_rng(config.seed)
    deltas = []
    for _ in range(updates):
        before = {n: layers[n].values.copy() for n in config.layers}
        record = execute_path(changed, paths[-1], rng)
        apply_traversal_update(layers, record, wave, config.delta)
        deltas.append(sum(np.abs(layers[n].values - before[n]) for n in config.layers))
        wave = swp.propagate(combine_layers(layers, config.layers), start, goal,
                             beta=config.beta, tau=config.tau)
        paths.append(swp.extract_path(wave))
    return AdaptationResult(start, goal, obstacle, paths, deltas, layers)


def adaptation_csvs(res: AdaptationResult) -> tuple[str, str]:
    p = ["update,step,row,col"]
    for u, path in enumerate(res.paths):
        p += [f"{u},{i},{r},{c}" for i, (r, c) in enumerate(path)]
    d = ["update,row,col,direction,change"]
    for u, arr in enumerate(res.deltas, 1):
        for r, c, k in np.argwhere(np.nan_to_num(arr) > 0).tolist():
            d.append(f"{u},{r},{c},{k},{arr[r, c, k]:.6f}")
    return "\n".join(p) + "\n", "\n".join(d) + "\n"


# --- evaluation -------------------------------------------------------------

def eval_pairs(grid: GridSpec, min_separation: int = 3) -> list[tuple[NodeId, NodeId]]:
    """All ordered traversable pairs at Chebyshev distance >= ``min_separation``."""
    nodes = grid.nodes()
    arr = np.array(nodes)
    out = []
    for i, s in enumerate(nodes):
        sep = np.max(np.abs(arr - arr[i]), axis=1)
        out.extend((s, nodes[j]) for j in np.flatnonzero(sep >= min_separation))
    return out


def _pair_seed(seed: int, grid: GridSpec, s: NodeId, g: NodeId) -> int:
    return int(np.random.SeedSequence([seed, grid.index(s), grid.index(g)]).generate_state(1)[0])


@dataclass
class Evaluation:
    table: ComparisonTable
    records: list[PathRecord]
    excluded: dict[str, int]
    n_pairs: int
    trend: list[list[str]] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "paths.csv").write_text(paths_to_csv(self.records))
        (out / "table.csv").write_text(self.table.to_csv())
        if self.trend:
            buf = io.StringIO()
            csv.writer(buf, lineterminator="\n").writerows(self.trend)
            (out / "trend.csv").write_text(buf.getvalue())


class _Planners:
    def __init__(self, combined: DelayField, config: ExperimentConfig):
        self.combined = combined
        self.config = config
        self.weights = baselines._forward_weights(combined, "D")
        self._flood_start = None
        self._flood = None

    def plan(self, name: str, s: NodeId, g: NodeId) -> list[NodeId]:
        if name == "swp":
            if self._flood_start != s:
                self._flood = swp.flood(self.combined, s, self.config.beta, self.config.tau)
                self._flood_start = s
            return swp.extract_path(self._flood, g)
        if name == "astar":
            return baselines.astar_euclidean(self.combined, s, g)
        if name == "rrtstar":
            seed = _pair_seed(self.config.seed, self.combined.grid, s, g)
            return baselines.rrt_star(self.combined, s, g, self.config.rrt_params(seed), self.weights)
        if name == "naive":
            return baselines.naive_path(self.combined.grid, s, g)
        raise InputError(f"unknown planner {name!r}")


def _map_record(name, s, g, path, coster: PathCoster) -> PathRecord:
    m = coster(path)
    lc = m.layer_costs
    return PathRecord(name, s, g, m.length_m, lc.get("current", 0), lc.get("obstacle", 0),
                      lc.get("slope", 0), m.normalized_cost, m.hops)


def evaluate_exhaustive(layers: CostLayerSet, config: ExperimentConfig | None = None,
                        planners=PLANNERS) -> Evaluation:
    """Plan every separated pair with every planner and price the paths on the map."""
    config = config or ExperimentConfig()
    combined = combine_layers(layers, config.layers)
    coster = PathCoster(combined, layers)
    runner = _Planners(combined, config)
    pairs = eval_pairs(layers.grid, config.min_separation)
    records, excluded = [], dict.fromkeys(planners, 0)
    for name in planners:
        for s, g in pairs:
            try:
                path = runner.plan(name, s, g)
            except UnreachableError:
                excluded[name] += 1
                continue
            records.append(_map_record(name, s, g, path, coster))
    for name, n in excluded.items():
        if n:
            log.info("%s failed on %d of %d pairs", name, n, len(pairs))
    table = build_table(records, "swp", excluded, list(planners))
    trend = trend_rows(records, layers.grid.spacing)
    return Evaluation(table, records, excluded, len(pairs), trend)


def evaluate_sampled(env: EnvironmentModel, layers: CostLayerSet,
                     config: ExperimentConfig | None = None, planners=PLANNERS) -> Evaluation:
    """Drive each planner's path for randomly drawn pairs and sum the observed raw costs.

    Paths that time out on the way are excluded, like planner failures.
    """
    config = config or ExperimentConfig()
    combined = combine_layers(layers, config.layers)
    coster = PathCoster(combined, layers)
    runner = _Planners(combined, config)
    pairs = eval_pairs(layers.grid, config.min_separation)
    rng = np.random.default_rng(config.seed)
    chosen = [pairs[i] for i in rng.choice(len(pairs), size=min(config.sampled_paths, len(pairs)),
                                           replace=False)]
    records, excluded = [], dict.fromkeys(planners, 0)
    for p_idx, name in enumerate(planners):
        for pair_idx, (s, g) in enumerate(chosen):
            try:
                path = runner.plan(name, s, g)
            except UnreachableError:
                excluded[name] += 1
                continue
            drive = np.random.default_rng([config.seed, pair_idx, p_idx])
            rec = execute_path(env, path, drive)
            if not rec.reached_goal:
                excluded[name] += 1
                continue
            tot = rec.observed_totals()
            m = coster(path)
            records.append(PathRecord(name, s, g, m.length_m, tot["current"], tot["obstacle"],
                                      tot["slope"], m.normalized_cost, m.hops))
    table = build_table(records, "swp", excluded, list(planners))
    return Evaluation(table, records, excluded, len(chosen))


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


def mse_is_declining(mse: list[float], threshold: float = -0.9) -> bool:
    rho = sps.spearmanr(np.arange(len(mse)), mse).statistic
    return bool(math.isfinite(rho) and rho < threshold)


def format_norms(norms: dict[str, NormalizationParams]) -> str:
    """One ``layer = lower,upper`` line per layer, values written with ``repr``."""
    return "".join(f"{n} = {p.lower!r},{p.upper!r}\n" for n, p in norms.items())


def parse_norms(text: str) -> dict[str, NormalizationParams]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.partition("=")
        name = name.strip()
        try:
            lo, hi = (float(x) for x in value.split(","))
        except ValueError:
            raise InputError(f"norms line {lineno}: expected 'layer = lower,upper'") from None
        if not sep or name not in LAYER_NAMES or name == "intraversable" or name in out:
            raise InputError(f"norms line {lineno}: bad layer {name!r}")
        out[name] = NormalizationParams(lo, hi)
    return out
