"""Waypoint lattice: grid topology, per-edge delay storage and cost layers.

A delay ``D[i, k]`` lives on the directed edge that delivers a spike *into*
node ``i`` from the neighbour lying in direction ``k`` of ``i``. It holds the
cost of arriving at ``i``. Values are continuous in ``[1, 10]`` and are only
rounded to integers when the network is simulated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InputError

MIN_DELAY = 1.0
MAX_DELAY = 10.0

NodeId = tuple[int, int]


class Direction(IntEnum):
    E = 0
    NE = 1
    N = 2
    NW = 3
    W = 4
    SW = 5
    S = 6
    SE = 7

    @property
    def offset(self) -> tuple[int, int]:
        return OFFSETS[self]

    @property
    def opposite(self) -> "Direction":
        return Direction((self + 4) % 8)

    @property
    def is_diagonal(self) -> bool:
        return bool(self % 2)


# (d_row, d_col); rows grow southwards.
OFFSETS: tuple[tuple[int, int], ...] = (
    (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1),
)
OFFSET_ARRAY = np.array(OFFSETS, dtype=np.int64)


def direction_between(a: NodeId, b: NodeId) -> Direction:
    """Direction of the step from ``a`` to the adjacent node ``b``."""
    step = (b[0] - a[0], b[1] - a[1])
    try:
        return Direction(OFFSETS.index(step))
    except ValueError:
        raise InputError(f"{a} and {b} are not lattice-adjacent") from None


def chebyshev(a: NodeId, b: NodeId) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


class GridSpec:
    """Rectangular waypoint grid with an optional mask of removed cells."""

    def __init__(self, width: int, height: int, spacing: float = 5.1,
                 traversable: np.ndarray | None = None):
        if width < 2 or height < 2:
            raise InputError(f"grid must be at least 2x2, got {width}x{height}")
        if not spacing > 0:
            raise InputError(f"spacing must be positive, got {spacing}")
        if traversable is None:
            traversable = np.ones((height, width), dtype=bool)
        traversable = np.array(traversable, dtype=bool)
        if traversable.shape != (height, width):
            raise InputError(f"mask shape {traversable.shape} != {(height, width)}")
        if not traversable.any():
            raise InputError("grid has no traversable cell")
        traversable.setflags(write=False)
        self.width = int(width)
        self.height = int(height)
        self.spacing = float(spacing)
        self.traversable = traversable

    def __repr__(self) -> str:
        return (f"GridSpec(width={self.width}, height={self.height}, "
                f"spacing={self.spacing}, masked={int((~self.traversable).sum())})")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridSpec):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.spacing == other.spacing
                and np.array_equal(self.traversable, other.traversable))

    __hash__ = None  # type: ignore[assignment]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def node_count(self) -> int:
        return int(self.traversable.sum())

    def in_bounds(self, node: NodeId) -> bool:
        r, c = node
        return 0 <= r < self.height and 0 <= c < self.width

    def is_traversable(self, node: NodeId) -> bool:
        return self.in_bounds(node) and bool(self.traversable[node])

    def check_node(self, node: NodeId, *, traversable: bool = True) -> NodeId:
        node = (int(node[0]), int(node[1]))
        if not self.in_bounds(node):
            raise InputError(f"node {node} outside {self.height}x{self.width} grid")
        if traversable and not self.traversable[node]:
            raise InputError(f"node {node} is masked out")
        return node

    def index(self, node: NodeId) -> int:
        return node[0] * self.width + node[1]

    def node(self, index: int) -> NodeId:
        return divmod(int(index), self.width)

    def nodes(self) -> list[NodeId]:
        """Traversable nodes in row-major order."""
        rows, cols = np.nonzero(self.traversable)
        return list(zip(rows.tolist(), cols.tolist()))

    @cached_property
    def edge_mask(self) -> np.ndarray:
        """Boolean ``(H, W, 8)``: True where node and its neighbour are both traversable."""
        mask = np.zeros((self.height, self.width, 8), dtype=bool)
        t = self.traversable
        for k, (dr, dc) in enumerate(OFFSETS):
            src = np.zeros_like(t)
            r0, r1 = max(0, -dr), self.height - max(0, dr)
            c0, c1 = max(0, -dc), self.width - max(0, dc)
            src[r0:r1, c0:c1] = t[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
            mask[:, :, k] = t & src
        mask.setflags(write=False)
        return mask

    @cached_property
    def edge_source(self) -> np.ndarray:
        """``(N, 8)`` flat index of the neighbour feeding each edge, -1 where absent."""
        n = self.width * self.height
        rows, cols = np.divmod(np.arange(n), self.width)
        src = np.full((n, 8), -1, dtype=np.int64)
        flat_mask = self.edge_mask.reshape(n, 8)
        for k, (dr, dc) in enumerate(OFFSETS):
            idx = (rows + dr) * self.width + (cols + dc)
            src[:, k] = np.where(flat_mask[:, k], idx, -1)
        src.setflags(write=False)
        return src


def neighbors(grid: GridSpec, node: NodeId) -> list[tuple[Direction, NodeId]]:
    """Traversable in-bounds neighbours of ``node`` in fixed direction order."""
    r, c = grid.check_node(node, traversable=False)
    out = []
    for d in Direction:
        dr, dc = OFFSETS[d]
        nb = (r + dr, c + dc)
        if grid.is_traversable(nb):
            out.append((d, nb))
    return out


def quantize_delay(value: float) -> int:
    """Round a continuous delay half-up to an integer countdown."""
    if not (MIN_DELAY <= value <= MAX_DELAY):
        raise InputError(f"delay {value} outside [{MIN_DELAY}, {MAX_DELAY}]")
    return int(math.floor(value + 0.5))


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5)


class DelayField:
    """Per-directed-edge delays on a grid; ``NaN`` marks non-existent edges."""

    def __init__(self, grid: GridSpec, values: np.ndarray | None = None):
        self.grid = grid
        if values is None:
            values = np.full((grid.height, grid.width, 8), MIN_DELAY)
        values = np.array(values, dtype=float)
        if values.shape != (grid.height, grid.width, 8):
            raise InputError(f"delay array shape {values.shape} does not match grid")
        values[~grid.edge_mask] = np.nan
        self.values = values
        self.validate()

    @classmethod
    def uniform(cls, grid: GridSpec, value: float = MIN_DELAY) -> "DelayField":
        return cls(grid, np.full((grid.height, grid.width, 8), float(value)))

    def copy(self) -> "DelayField":
        return DelayField(self.grid, self.values.copy())

    def edge_values(self) -> np.ndarray:
        """Values of all existing edges, in (row, col, direction) order."""
        return self.values[self.grid.edge_mask]

    def incoming(self, node: NodeId) -> np.ndarray:
        return self.values[node[0], node[1]]

    def __getitem__(self, key: tuple[int, int, int]) -> float:
        return float(self.values[key])

    def quantized(self) -> np.ndarray:
        """Integer delays ``(H, W, 8)``; 0 where there is no edge."""
        q = np.zeros(self.values.shape, dtype=np.int64)
        m = self.grid.edge_mask
        q[m] = round_half_up(self.values[m]).astype(np.int64)
        return q

    def validate(self) -> None:
        v = self.edge_values()
        if v.size and not np.all((v >= MIN_DELAY) & (v <= MAX_DELAY)):
            bad = v[~((v >= MIN_DELAY) & (v <= MAX_DELAY))]
            raise InputError(f"delays outside [1, 10]: {bad[:5]}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DelayField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(
            self.values, other.values, equal_nan=True)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class NormalizationParams:
    """Raw-sensor bounds mapped onto delays 1 and 10."""
    lower: float
    upper: float

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise InputError("normalization bounds must be finite")
        if not self.upper > self.lower:
            raise InputError(f"upper bound {self.upper} must exceed lower {self.lower}")


SENSED_LAYERS = ("current", "obstacle", "slope")
INTRAVERSABLE = "intraversable"
LAYER_NAMES = SENSED_LAYERS + (INTRAVERSABLE,)


@dataclass
class CostLayerSet:
    grid: GridSpec
    layers: dict[str, DelayField]
    norms: dict[str, NormalizationParams] = field(default_factory=dict)

    def __post_init__(self):
        for name, layer in self.layers.items():
            if layer.grid != self.grid:
                raise InputError(f"layer {name!r} is on a different grid")
        for name in self.norms:
            if name == INTRAVERSABLE or name not in self.layers:
                raise InputError(f"no normalization allowed for layer {name!r}")

    @classmethod
    def fresh(cls, grid: GridSpec,
              norms: dict[str, NormalizationParams] | None = None) -> "CostLayerSet":
        """All four standard layers initialised to delay 1."""
        return cls(grid, {n: DelayField.uniform(grid) for n in LAYER_NAMES}, dict(norms or {}))

    def __getitem__(self, name: str) -> DelayField:
        return self.layers[name]

    def copy(self) -> "CostLayerSet":
        return CostLayerSet(self.grid, {n: f.copy() for n, f in self.layers.items()},
                            dict(self.norms))

    def stacked(self) -> np.ndarray:
        """All layers' edge values concatenated in layer order."""
        return np.concatenate([self.layers[n].edge_values() for n in self.layers])

    def validate(self) -> None:
        for f in self.layers.values():
            f.validate()


def combine_layers(layers: CostLayerSet, selection: Iterable[str]) -> DelayField:
    """Sum the selected layers edge-wise and rescale the sums onto ``[1, 10]``."""
    selection = list(dict.fromkeys(selection))
    if not selection:
        raise InputError("layer selection is empty")
    missing = [s for s in selection if s not in layers.layers]
    if missing:
        raise InputError(f"unknown layers: {missing}")
    total = sum(layers.layers[s].values for s in selection)
    mask = layers.grid.edge_mask
    sums = total[mask]
    out = np.full(total.shape, np.nan)
    if sums.size:
        lo, hi = sums.min(), sums.max()
        if hi > lo:
            scaled = MIN_DELAY + (MAX_DELAY - MIN_DELAY) * (sums - lo) / (hi - lo)
            out[mask] = np.clip(scaled, MIN_DELAY, MAX_DELAY)
        else:
            out[mask] = MIN_DELAY
    combined = DelayField(layers.grid, out)
    combined.validate()
    return combined


def parse_layer_selection(text: str | Iterable[str] | None) -> list[str]:
    if text is None:
        return list(LAYER_NAMES)
    if isinstance(text, str):
        text = [t.strip() for t in text.split(",")]
    sel = [t for t in text if t]
    if sel == ["all"]:
        return list(LAYER_NAMES)
    if not sel:
        raise InputError("layer selection is empty")
    unknown = [t for t in sel if t not in LAYER_NAMES]
    if unknown:
        raise InputError(f"unknown layer(s) {', '.join(unknown)}; expected {', '.join(LAYER_NAMES)}")
    return list(dict.fromkeys(sel))


# --- costmap file format --------------------------------------------------

COSTMAP_FORMAT_VERSION = 1
_MAGIC = "# spikewave costmap"


def format_costmap(layers: CostLayerSet) -> str:
    grid = layers.grid
    mask = "".join("1" if t else "0" for t in grid.traversable.ravel())
    lines = [
        _MAGIC,
        f"format_version = {COSTMAP_FORMAT_VERSION}",
        f"width = {grid.width}",
        f"height = {grid.height}",
        f"spacing_m = {grid.spacing!r}",
        f"mask = {mask}",
        f"layers = {','.join(layers.layers)}",
    ]
    edge_idx = np.argwhere(grid.edge_mask)
    for name, f in layers.layers.items():
        lines.append(f"[layer {name}]")
        norm = layers.norms.get(name)
        lines.append("norm = none" if norm is None else f"norm = {norm.lower!r},{norm.upper!r}")
        vals = f.values
        for r, c, k in edge_idx.tolist():
            lines.append(f"{r},{c},{k},{vals[r, c, k]:.6f}")
        lines.append("[end]")
    return "\n".join(lines) + "\n"


def parse_costmap(text: str) -> CostLayerSet:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise InputError("not a costmap file")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("[layer "):
        line = lines[i].strip()
        if line:
            key, sep, value = line.partition("=")
            if not sep:
                raise InputError(f"bad header line {i + 1}: {line!r}")
            header[key.strip()] = value.strip()
        i += 1
    try:
        version = int(header["format_version"])
        width, height = int(header["width"]), int(header["height"])
        spacing = float(header["spacing_m"])
        mask_str = header["mask"]
        names = header["layers"].split(",")
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad costmap header: {exc}") from None
    if version != COSTMAP_FORMAT_VERSION:
        raise InputError(f"unsupported costmap version {version}")
    if len(mask_str) != width * height or set(mask_str) - {"0", "1"}:
        raise InputError("mask string malformed")
    mask = np.array([ch == "1" for ch in mask_str]).reshape(height, width)
    grid = GridSpec(width, height, spacing, mask)

    fields: dict[str, DelayField] = {}
    norms: dict[str, NormalizationParams] = {}
    expected_edges = int(grid.edge_mask.sum())
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if not (line.startswith("[layer ") and line.endswith("]")):
            raise InputError(f"expected layer section at line {i}: {line!r}")
        name = line[len("[layer "):-1]
        norm_key, _, norm_val = lines[i].partition("=")
        i += 1
        if norm_key.strip() != "norm":
            raise InputError(f"layer {name!r} lacks a norm line")
        norm_val = norm_val.strip()
        if norm_val != "none":
            lo, hi = (float(x) for x in norm_val.split(","))
            norms[name] = NormalizationParams(lo, hi)
        values = np.full((height, width, 8), np.nan)
        seen = np.zeros((height, width, 8), dtype=bool)
        while i < len(lines) and lines[i].strip() != "[end]":
            try:
                r, c, k, d = lines[i].split(",")
                r, c, k, d = int(r), int(c), int(k), float(d)
            except ValueError:
                raise InputError(f"bad edge record at line {i + 1}: {lines[i]!r}") from None
            if not (0 <= r < height and 0 <= c < width and 0 <= k < 8) or not grid.edge_mask[r, c, k]:
                raise InputError(f"edge ({r},{c},{k}) does not exist on this grid")
            if seen[r, c, k]:
                raise InputError(f"duplicate edge ({r},{c},{k})")
            seen[r, c, k] = True
            values[r, c, k] = d
            i += 1
        if i >= len(lines):
            raise InputError(f"layer {name!r} not terminated")
        i += 1
        if int(seen.sum()) != expected_edges:
            raise InputError(f"layer {name!r} has {int(seen.sum())} edges, expected {expected_edges}")
        f = DelayField(grid, values)
        f.validate()
        fields[name] = f
    if list(fields) != names:
        raise InputError(f"layer sections {list(fields)} do not match header {names}")
    return CostLayerSet(grid, fields, norms)


def write_costmap(layers: CostLayerSet, path: str | Path) -> None:
    Path(path).write_text(format_costmap(layers))


def read_costmap(path: str | Path) -> CostLayerSet:
    return parse_costmap(Path(path).read_text())
