"""Procedural park environment and noisy traversal sensing.

The generated park has a hill in its bottom-right quadrant, a paved and a
dirt road crossing the grid, a row of trees plus a few scattered trees and
benches, foot traffic along the roads, and a handful of cells the robot can
never reach. Sensor readings are drawn from simple parametric models whose
means are known, so learned maps can be checked against ground truth.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .eprop import CostObservation
from .errors import InputError
from .lattice import (OFFSETS, SENSED_LAYERS, GridSpec, NodeId, NormalizationParams, chebyshev,
                      direction_between)

log = logging.getLogger(__name__)

TERRAINS = ("grass", "pavement", "dirt")
GRASS, PAVEMENT, DIRT = range(3)

SENSING_MODES = ("waypoint", "segment")
LEVY_ALPHA = 1.5
CALIBRATION_EPS = 1e-6


@dataclass
class EnvironmentModel:
    grid: GridSpec
    terrain: np.ndarray            # (H, W) index into TERRAINS
    height: np.ndarray             # metres
    obstacle_strength: np.ndarray  # [0, 1]
    foot_traffic: np.ndarray       # per-segment probability of a pedestrian
    intraversable: np.ndarray      # bool
    p_fail: np.ndarray             # per-cell probability a segment into it times out
    noise_sigma: dict[str, float] = field(
        default_factory=lambda: {"current": 0.06, "obstacle": 0.02, "slope": 0.004})
    base_current: tuple[float, float, float] = (2.0, 1.9, 1.95)  # amps, per TERRAINS
    boundary_surcharge: float = 0.5
    surge: tuple[float, float] = (0.2, 0.6)
    seed: int = 0
    sensing: str = "waypoint"

    def __post_init__(self):
        if self.sensing not in SENSING_MODES:
            raise InputError(f"sensing must be one of {SENSING_MODES}")
        for name in ("terrain", "height", "obstacle_strength", "foot_traffic",
                     "intraversable", "p_fail"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != self.grid.shape:
                raise InputError(f"{name} has shape {arr.shape}, grid is {self.grid.shape}")
            setattr(self, name, arr)
        for name in ("obstacle_strength", "foot_traffic", "p_fail"):
            arr = getattr(self, name)
            if not np.all((arr >= 0) & (arr <= 1)):
                raise InputError(f"{name} must lie in [0, 1]")
        self.intraversable = self.intraversable.astype(bool)
        self.terrain = self.terrain.astype(np.int64)

    def copy(self) -> "EnvironmentModel":
        return EnvironmentModel.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "seed": self.seed,
            "width": g.width, "height": g.height, "spacing_m": g.spacing,
            "traversable": g.traversable.astype(int).tolist(),
            "terrain": self.terrain.tolist(),
            "height_m": self.height.tolist(),
            "obstacle_strength": self.obstacle_strength.tolist(),
            "foot_traffic": self.foot_traffic.tolist(),
            "intraversable": self.intraversable.astype(int).tolist(),
            "p_fail": self.p_fail.tolist(),
            "noise_sigma": dict(self.noise_sigma),
            "base_current": list(self.base_current),
            "boundary_surcharge": self.boundary_surcharge,
            "surge": list(self.surge),
            "sensing": self.sensing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentModel":
        try:
            grid = GridSpec(d["width"], d["height"], d["spacing_m"],
                            np.array(d["traversable"], dtype=bool))
            return cls(grid, np.array(d["terrain"]), np.array(d["height_m"], dtype=float),
                       np.array(d["obstacle_strength"], dtype=float),
                       np.array(d["foot_traffic"], dtype=float),
                       np.array(d["intraversable"], dtype=bool),
                       np.array(d["p_fail"], dtype=float),
                       dict(d["noise_sigma"]), tuple(d["base_current"]),
                       float(d["boundary_surcharge"]), tuple(d["surge"]), int(d["seed"]),
                       d.get("sensing", "waypoint"))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed environment description: {exc}") from None


def save_env(env: EnvironmentModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(env.to_dict(), indent=1) + "\n")


def load_env(path: str | Path) -> EnvironmentModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None
    return EnvironmentModel.from_dict(data)


def _smooth_noise(rng, shape, n_waves=4, amplitude=0.15):
    h, w = shape
    rr, cc = np.mgrid[0:h, 0:w]
    out = np.zeros(shape)
    for _ in range(n_waves):
        fr, fc = rng.uniform(0.3, 1.2, 2) * 2 * np.pi / np.array([h, w])
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(fr * rr + fc * cc + phase)
    return amplitude * out / n_waves


def build_park_env(seed: int = 0, width: int = 17, height: int = 17, spacing: float = 5.1,
                   n_trees: tuple[int, int] = (8, 15), n_intraversable: tuple[int, int] = (2, 4),
                   hill_height: float = 2.5, masked_patch: int = 2) -> EnvironmentModel:
    """Deterministic park-like environment for ``seed``."""
    if width < 5 or height < 5:
        raise InputError("park layout needs at least a 5x5 grid")
    rng = np.random.default_rng(seed)
    shape = (height, width)
    rr, cc = np.mgrid[0:height, 0:width]

    # hill centred in the bottom-right quadrant
    hr, hc = 0.78 * (height - 1), 0.78 * (width - 1)
    spread = 0.17 * min(width, height)
    elev = hill_height * np.exp(-((rr - hr) ** 2 + (cc - hc) ** 2) / (2 * spread ** 2))
    elev += _smooth_noise(rng, shape)

    terrain = np.full(shape, GRASS, dtype=np.int64)
    road_row = int(rng.integers(height // 4, height // 2))
    road_col = int(rng.integers(width // 4, width // 2))
    terrain[road_row, :] = PAVEMENT
    terrain[:, road_col] = DIRT
    terrain[road_row, road_col] = PAVEMENT
    on_road = terrain != GRASS

    mask = np.ones(shape, dtype=bool)
    if masked_patch > 0:
        mask[:masked_patch, width - masked_patch:] = False

    free = mask & ~on_road
    strength = np.zeros(shape)
    lo, hi = n_trees
    target = int(rng.integers(lo, hi + 1))
    # a row of trees in the grass away from the hill
    row_len = min(5, width - 4, target)
    tree_row = int(rng.integers(road_row + 2, max(road_row + 3, height // 2 + 2)))
    tree_row = min(tree_row, height - 2)
    tree_col0 = int(rng.integers(1, max(2, width - row_len - 1)))
    trees = [(tree_row, tree_col0 + i) for i in range(row_len)
             if free[tree_row, tree_col0 + i]]
    candidates = [tuple(x) for x in np.argwhere(free).tolist() if tuple(x) not in trees]
    rng.shuffle(candidates)
    for cell in candidates:
        if len(trees) >= target:
            break
        trees.append(cell)
    trees = trees[:hi]
    for r, c in trees:
        strength[r, c] = rng.uniform(0.9, 1.0)
    # benches beside the paved road
    bench_col = int(rng.integers(1, width - 1))
    for dr in (-1, 1):
        br = road_row + dr
        if 0 <= br < height and free[br, bench_col] and strength[br, bench_col] == 0:
            strength[br, bench_col] = 0.9
            break

    traffic = np.where(terrain == PAVEMENT, 0.35, np.where(terrain == DIRT, 0.15, 0.02))

    intrav = np.zeros(shape, dtype=bool)
    lo, hi = n_intraversable
    want = int(rng.integers(lo, hi + 1))
    spots = [tuple(x) for x in np.argwhere(free & (strength == 0)).tolist()]
    idx = rng.permutation(len(spots))[:want]
    for i in idx:
        intrav[spots[i]] = True
    p_fail = np.where(intrav, 0.97, 0.0)

    grid = GridSpec(width, height, spacing, mask)
    return EnvironmentModel(grid, terrain, elev, strength, traffic, intrav, p_fail, seed=seed)


def build_uniform_env(width: int = 5, height: int = 5, spacing: float = 5.1,
                      noise: bool = False, seed: int = 0) -> EnvironmentModel:
    """Flat grass field with no obstacles or traffic."""
    shape = (height, width)
    sigma = {"current": 0.06, "obstacle": 0.02, "slope": 0.004} if noise else \
        {"current": 0.0, "obstacle": 0.0, "slope": 0.0}
    return EnvironmentModel(GridSpec(width, height, spacing), np.zeros(shape, dtype=np.int64),
                            np.zeros(shape), np.zeros(shape), np.zeros(shape),
                            np.zeros(shape, dtype=bool), np.zeros(shape), sigma, seed=seed)


def _edge_length(grid: GridSpec, src: NodeId, dst: NodeId) -> float:
    d = direction_between(src, dst)
    return grid.spacing * (math.sqrt(2.0) if d.is_diagonal else 1.0)


def terrain_boundary(env: EnvironmentModel) -> np.ndarray:
    """Cells with at least one 8-neighbour of a different terrain type."""
    t = env.terrain
    h, w = t.shape
    out = np.zeros(t.shape, dtype=bool)
    padded = np.pad(t, 1, mode="edge")
    for dr, dc in OFFSETS:
        out |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] != t
    return out


def tilt(env: EnvironmentModel) -> np.ndarray:
    """Pitch plus roll magnitude at each cell for a grid-aligned heading (rad, small-angle)."""
    gy, gx = np.gradient(env.height, env.grid.spacing)
    return np.abs(gx) + np.abs(gy)


def _current_slope_mean(env: EnvironmentModel, src: NodeId, dst: NodeId) -> tuple[float, float]:
    current = env.base_current[env.terrain[dst]]
    if env.sensing == "waypoint":
        if terrain_boundary(env)[dst]:
            current += env.boundary_surcharge
        slope = tilt(env)[dst]
    else:
        if env.terrain[src] != env.terrain[dst]:
            current += env.boundary_surcharge
        slope = abs(env.height[dst] - env.height[src]) / _edge_length(env.grid, src, dst)
    return float(current), float(slope)


def segment_mean(env: EnvironmentModel, src: NodeId, dst: NodeId) -> dict[str, float]:
    """Noise-free expected raw reading for each sensed layer on ``src -> dst``.

    With ``sensing="waypoint"`` the readings depend on the destination only:
    current carries a surcharge at cells bordering another terrain type, and
    slope is the terrain tilt there. ``sensing="segment"`` charges the
    surcharge when the segment crosses terrain types and takes the slope as
    rise over run along the segment.

    The obstacle mean accounts for the clamp to [0, 1], averaging over the
    pedestrian surge by Gauss-Legendre quadrature.
    """
    grid = env.grid
    src, dst = grid.check_node(src), grid.check_node(dst)
    current, slope = _current_slope_mean(env, src, dst)
    base, sig, p = env.obstacle_strength[dst], env.noise_sigma["obstacle"], env.foot_traffic[dst]
    obstacle = (1.0 - p) * _clipped_normal_mean(base, sig)
    if p > 0.0:
        lo, hi = env.surge
        shifted = base + lo + (hi - lo) * (_GL_NODES + 1.0) / 2.0
        obstacle += p * float(np.dot(_GL_WEIGHTS, _clipped_normal_mean(shifted, sig))) / 2.0
    return {"current": float(current), "obstacle": float(obstacle), "slope": float(slope)}


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def _clipped_normal_mean(mu, sigma):
    """E[clip(X, 0, 1)] for X ~ N(mu, sigma^2)."""
    mu = np.asarray(mu, dtype=float)
    if sigma == 0.0:
        out = np.clip(mu, 0.0, 1.0)
    else:
        a, b = (0.0 - mu) / sigma, (1.0 - mu) / sigma
        inside = mu * (sps.norm.cdf(b) - sps.norm.cdf(a)) + sigma * (sps.norm.pdf(a) - sps.norm.pdf(b))
        out = inside + sps.norm.sf(b)
    return out if out.ndim else float(out)


def sample_segment(env: EnvironmentModel, src: NodeId, dst: NodeId,
                   rng: np.random.Generator) -> tuple[dict[str, CostObservation], bool]:
    """Drive ``src -> dst`` once: one noisy reading per sensed layer and whether it arrived."""
    grid = env.grid
    src, dst = grid.check_node(src), grid.check_node(dst)
    if chebyshev(src, dst) != 1:
        raise InputError(f"{src} and {dst} are not adjacent")
    sig = env.noise_sigma
    mean_current, mean_slope = _current_slope_mean(env, src, dst)
    # fixed draw order keeps streams aligned whatever the outcome
    n_cur, n_obs, n_slope = rng.standard_normal(3)
    ped = rng.random() < env.foot_traffic[dst]
    surge = rng.uniform(*env.surge)
    fail_draw = rng.random()

    current = mean_current + sig["current"] * n_cur
    obstacle = env.obstacle_strength[dst] + (surge if ped else 0.0) + sig["obstacle"] * n_obs
    obstacle = min(max(obstacle, 0.0), 1.0)
    slope = mean_slope + sig["slope"] * n_slope
    obs = {
        "current": CostObservation(dst, "current", float(current)),
        "obstacle": CostObservation(dst, "obstacle", float(obstacle)),
        "slope": CostObservation(dst, "slope", float(slope)),
    }
    return obs, bool(fail_draw >= env.p_fail[dst])


@dataclass(frozen=True)
class Segment:
    src: NodeId
    dst: NodeId
    observations: dict[str, CostObservation]
    success: bool


@dataclass
class TraversalRecord:
    segments: list[Segment]
    reached_goal: bool

    def visited(self) -> list[NodeId]:
        if not self.segments:
            return []
        return [self.segments[0].src] + [s.dst for s in self.segments if s.success]

    def observed_totals(self) -> dict[str, float]:
        """Raw readings summed over the segments actually completed."""
        tot = dict.fromkeys(SENSED_LAYERS, 0.0)
        for s in self.segments:
            if s.success:
                for name, o in s.observations.items():
                    tot[name] += o.raw
        return tot


def execute_path(env: EnvironmentModel, path: list[NodeId],
                 rng: np.random.Generator) -> TraversalRecord:
    """Drive along ``path``, stopping at the first segment that times out."""
    segments = []
    for src, dst in zip(path, path[1:]):
        obs, ok = sample_segment(env, src, dst, rng)
        segments.append(Segment(src, dst, obs, ok))
        if not ok:
            return TraversalRecord(segments, False)
    return TraversalRecord(segments, True)


def levy_step_length(rng: np.random.Generator, max_length: float, alpha: float = LEVY_ALPHA,
                     size=None):
    """Pareto(scale 1, ``alpha``) step lengths truncated at ``max_length`` (inverse CDF)."""
    u = rng.random(size)
    tail = 1.0 - max_length ** (-alpha)
    return (1.0 - u * tail) ** (-1.0 / alpha)


def levy_goal(grid: GridSpec, current: NodeId, rng: np.random.Generator,
              alpha: float = LEVY_ALPHA, retries: int = 16) -> NodeId:
    """Pick the next exploration goal by a Lévy-flight jump from ``current``.

    The landing point snaps to the nearest traversable cell. Jumps that snap
    back onto ``current`` are redrawn up to ``retries`` times, after which the
    nearest other cell is taken.
    """
    current = grid.check_node(current)
    cells = np.argwhere(grid.traversable)
    if len(cells) < 2:
        raise InputError("grid has a single traversable cell; no goal possible")
    is_current = (cells[:, 0] == current[0]) & (cells[:, 1] == current[1])
    diag = math.hypot(grid.width - 1, grid.height - 1)
    for attempt in range(retries + 1):
        length = float(levy_step_length(rng, diag, alpha))
        theta = rng.uniform(0.0, 2.0 * math.pi)
        y = current[0] + length * math.sin(theta)
        x = current[1] + length * math.cos(theta)
        d2 = (cells[:, 0] - y) ** 2 + (cells[:, 1] - x) ** 2
        best = int(np.argmin(d2))
        if not is_current[best]:
            break
    else:
        d2[is_current] = np.inf
        best = int(np.argmin(d2))
    r, c = cells[best]
    return (int(r), int(c))


def random_segment(grid: GridSpec, rng: np.random.Generator) -> tuple[NodeId, NodeId]:
    cells = grid.nodes()
    while True:
        src = cells[int(rng.integers(len(cells)))]
        ks = np.flatnonzero(grid.edge_mask[src])
        if ks.size:
            break
    dr, dc = OFFSETS[int(ks[int(rng.integers(ks.size))])]
    return src, (src[0] + dr, src[1] + dc)


def calibrate(env: EnvironmentModel, n_segments: int,
              rng: np.random.Generator) -> dict[str, NormalizationParams]:
    """Drive random segments and set each layer's bounds to mean -/+ 2 standard deviations."""
    if n_segments < 30:
        raise InputError("calibration needs at least 30 segments")
    raws = {name: [] for name in SENSED_LAYERS}
    for _ in range(n_segments):
        src, dst = random_segment(env.grid, rng)
        obs, _ = sample_segment(env, src, dst, rng)
        for name in SENSED_LAYERS:
            raws[name].append(obs[name].raw)
    return {name: bounds_from_samples(vals, name) for name, vals in raws.items()}


def bounds_from_samples(values, name: str = "") -> NormalizationParams:
    arr = np.asarray(values, dtype=float)
    mu, sd = float(arr.mean()), float(arr.std())
    if sd == 0.0:
        log.warning("calibration for %s has zero spread; widening by %g", name or "layer",
                    CALIBRATION_EPS)
        return NormalizationParams(mu - CALIBRATION_EPS, mu + CALIBRATION_EPS)
    return NormalizationParams(mu - 2 * sd, mu + 2 * sd)
