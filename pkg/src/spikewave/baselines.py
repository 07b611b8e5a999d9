"""Reference planners and path accounting on the same delay fields the SWP uses.

Edge weight everywhere is the quantized delay into the successor node, so
costs are comparable across planners.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InputError, UnreachableError
from .lattice import (OFFSET_ARRAY, OFFSETS, CostLayerSet, DelayField, GridSpec, NodeId, chebyshev,
                      direction_between, neighbors)

WEIGHT_MODES = ("D", "D_plus_1")


def _forward_weights(delays: DelayField, weight_mode: str) -> np.ndarray:
    """``w[r, c, k]``: cost of stepping from ``(r, c)`` in direction ``k``."""
    if weight_mode not in WEIGHT_MODES:
        raise InputError(f"weight_mode must be one of {WEIGHT_MODES}")
    q = delays.quantized()
    grid = delays.grid
    w = np.full(q.shape, -1, dtype=np.int64)
    for k, (dr, dc) in enumerate(OFFSETS):
        opp = (k + 4) % 8
        # the edge from a in direction k is stored at b = a + off, slot opp
        valid = grid.edge_mask[:, :, k]
        rows, cols = np.nonzero(valid)
        w[rows, cols, k] = q[rows + dr, cols + dc, opp]
    if weight_mode == "D_plus_1":
        w[w >= 0] += 1
    return w


def _reconstruct(prev: dict, start: NodeId, goal: NodeId) -> list[NodeId]:
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    path.reverse()
    return path


def dijkstra_all(delays: DelayField, start: NodeId, weight_mode: str = "D"):
    """Single-source shortest distances; returns ``(dist, prev)`` with ``inf`` for unreachable."""
    grid = delays.grid
    start = grid.check_node(start)
    w = _forward_weights(delays, weight_mode)
    dist = np.full(grid.shape, np.inf)
    dist[start] = 0
    prev: dict[NodeId, NodeId] = {}
    done = np.zeros(grid.shape, dtype=bool)
    heap = [(0, 0, start)]
    seq = 1
    while heap:
        d, _, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        r, c = u
        for k in range(8):
            wk = w[r, c, k]
            if wk < 0:
                continue
            v = (r + OFFSETS[k][0], c + OFFSETS[k][1])
            nd = d + int(wk)
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, seq, v))
                seq += 1
    return dist, prev


def dijkstra(delays: DelayField, start: NodeId, goal: NodeId,
             weight_mode: str = "D") -> tuple[int, list[NodeId]]:
    grid = delays.grid
    start, goal = grid.check_node(start), grid.check_node(goal)
    if start == goal:
        return 0, [start]
    dist, prev = dijkstra_all(delays, start, weight_mode)
    if not np.isfinite(dist[goal]):
        raise UnreachableError(f"{goal} unreachable from {start}")
    return int(dist[goal]), _reconstruct(prev, start, goal)


def astar_euclidean(delays: DelayField, start: NodeId, goal: NodeId) -> list[NodeId]:
    """A* with the straight-line distance (in cells) as heuristic.

    The heuristic can overestimate delay-valued costs along diagonals, so the
    result is not guaranteed optimal.
    """
    grid = delays.grid
    start, goal = grid.check_node(start), grid.check_node(goal)
    if start == goal:
        return [start]
    w = _forward_weights(delays, "D")
    gr, gc = goal

    def h(n):
        return math.hypot(n[0] - gr, n[1] - gc)

    g = {start: 0}
    prev: dict[NodeId, NodeId] = {}
    closed = set()
    heap = [(h(start), 0, start)]
    seq = 1
    while heap:
        _, _, u = heapq.heappop(heap)
        if u == goal:
            return _reconstruct(prev, start, goal)
        if u in closed:
            continue
        closed.add(u)
        r, c = u
        gu = g[u]
        for k in range(8):
            wk = w[r, c, k]
            if wk < 0:
                continue
            v = (r + OFFSETS[k][0], c + OFFSETS[k][1])
            if v in closed:
                continue
            nd = gu + int(wk)
            if nd < g.get(v, math.inf):
                g[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd + h(v), seq, v))
                seq += 1
    raise UnreachableError(f"{goal} unreachable from {start}")


def naive_path(grid: GridSpec, start: NodeId, goal: NodeId) -> list[NodeId]:
    """Greedy walk that always steps to the neighbour closest to the goal; ignores cost."""
    start, goal = grid.check_node(start), grid.check_node(goal)
    path = [start]
    node = start
    while node != goal:
        here = math.hypot(node[0] - goal[0], node[1] - goal[1])
        best, best_d = None, here
        for _, nb in neighbors(grid, node):
            d = math.hypot(nb[0] - goal[0], nb[1] - goal[1])
            if d < best_d - 1e-12:
                best, best_d = nb, d
        if best is None:
            raise UnreachableError(f"greedy walk trapped at {node} on the way to {goal}")
        path.append(best)
        node = best
    return path


# --- RRT* -------------------------------------------------------------------

@dataclass(frozen=True)
class RrtParams:
    iterations: int = 2000
    rewire_radius: int = 2
    goal_bias: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise InputError("iterations must be positive")
        if self.rewire_radius < 1:
            raise InputError("rewire_radius must be at least 1")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise InputError("goal_bias must lie in [0, 1]")


@numba.njit(cache=True)
def _line_cost(w, trav, width, height, node, k, steps, offs):
    """Cost of a straight run of ``steps`` moves from ``node`` along ``k``; -1 if blocked."""
    r = node // width
    c = node % width
    total = 0
    for _ in range(steps):
        wk = w[r * width + c, k]
        if wk < 0:
            return -1
        total += wk
        r += offs[k, 0]
        c += offs[k, 1]
    return total


@numba.njit(cache=True)
def _rrt_kernel(w, trav, width, height, start, goal, samples, draws, goal_bias, radius, offs):
    n = width * height
    in_tree = np.zeros(n, dtype=np.bool_)
    parent = np.full(n, -1, dtype=np.int64)
    pdir = np.full(n, -1, dtype=np.int64)
    psteps = np.zeros(n, dtype=np.int64)
    cost = np.full(n, np.inf)
    order = np.empty(n, dtype=np.int64)
    count = 0
    in_tree[start] = True
    cost[start] = 0.0
    order[0] = start
    count = 1
    for it in range(samples.shape[0]):
        s = goal if draws[it] < goal_bias else samples[it]
        if in_tree[s]:
            continue
        sr = s // width
        sc = s % width
        nearest = -1
        bd = 1e18
        for idx in range(count):
            x = order[idx]
            dr = x // width - sr
            dc = x % width - sc
            dd = dr * dr + dc * dc
            if dd < bd:
                bd = dd
                nearest = x
        # one grid step from nearest in the compass direction closest to the sample
        nr = nearest // width
        nc = nearest % width
        vr = sr - nr
        vc = sc - nc
        vn = math.sqrt(vr * vr + vc * vc)
        best_k = -1
        best_cos = -2.0
        for k in range(8):
            on = math.sqrt(offs[k, 0] ** 2 + offs[k, 1] ** 2)
            cs = (offs[k, 0] * vr + offs[k, 1] * vc) / (on * vn)
            if cs > best_cos + 1e-12:
                best_cos = cs
                best_k = k
        if w[nearest, best_k] < 0:
            continue
        new = (nr + offs[best_k, 0]) * width + (nc + offs[best_k, 1])
        if in_tree[new]:
            continue
        # cheapest parent among tree nodes joined to new by a straight run
        best_p = nearest
        best_pk = best_k
        best_ps = 1
        best_c = cost[nearest] + w[nearest, best_k]
        newr = new // width
        newc = new % width
        for k in range(8):
            back = (k + 4) % 8
            for st in range(1, radius + 1):
                pr = newr + offs[back, 0] * st
                pc = newc + offs[back, 1] * st
                if pr < 0 or pr >= height or pc < 0 or pc >= width:
                    break
                p = pr * width + pc
                if not trav[p]:
                    break
                if not in_tree[p]:
                    continue
                lc = _line_cost(w, trav, width, height, p, k, st, offs)
                if lc < 0:
                    break
                cand = cost[p] + lc
                if cand < best_c - 1e-12:
                    best_c = cand
                    best_p = p
                    best_pk = k
                    best_ps = st
        in_tree[new] = True
        parent[new] = best_p
        pdir[new] = best_pk
        psteps[new] = best_ps
        cost[new] = best_c
        order[count] = new
        count += 1
        # rewire neighbours through new when that is cheaper
        for k in range(8):
            for st in range(1, radius + 1):
                qr = newr + offs[k, 0] * st
                qc = newc + offs[k, 1] * st
                if qr < 0 or qr >= height or qc < 0 or qc >= width:
                    break
                q = qr * width + qc
                if not trav[q]:
                    break
                if not in_tree[q]:
                    continue
                lc = _line_cost(w, trav, width, height, new, k, st, offs)
                if lc < 0:
                    break
                cand = cost[new] + lc
                if cand < cost[q] - 1e-12:
                    diff = cand - cost[q]
                    parent[q] = new
                    pdir[q] = k
                    psteps[q] = st
                    cost[q] = cand
                    for idx in range(count):
                        x = order[idx]
                        if x == q:
                            continue
                        y = parent[x]
                        while y >= 0:
                            if y == q:
                                cost[x] += diff
                                break
                            y = parent[y]
    return in_tree, parent, pdir, psteps, cost


def _erase_loops(path: list[NodeId]) -> list[NodeId]:
    out: list[NodeId] = []
    pos: dict[NodeId, int] = {}
    for node in path:
        if node in pos:
            cut = pos[node]
            for dropped in out[cut + 1:]:
                del pos[dropped]
            del out[cut + 1:]
        else:
            pos[node] = len(out)
            out.append(node)
    return out


def rrt_star_tree(delays: DelayField, start: NodeId, goal: NodeId, params: RrtParams,
                  weights: np.ndarray | None = None):
    """Grow the RRT* tree; returns ``(in_tree, parent, pdir, psteps, cost)`` over flat indices."""
    grid = delays.grid
    start, goal = grid.check_node(start), grid.check_node(goal)
    if weights is None:
        weights = _forward_weights(delays, "D")
    rng = np.random.default_rng(params.seed)
    cells = np.flatnonzero(grid.traversable.ravel())
    samples = cells[rng.integers(0, cells.size, params.iterations)]
    draws = rng.random(params.iterations)
    return _rrt_kernel(weights.reshape(-1, 8), grid.traversable.ravel(), grid.width, grid.height,
                       grid.index(start), grid.index(goal), samples, draws,
                       float(params.goal_bias), int(params.rewire_radius), OFFSET_ARRAY)


def rrt_star(delays: DelayField, start: NodeId, goal: NodeId,
             params: RrtParams = RrtParams(), weights: np.ndarray | None = None) -> list[NodeId]:
    """RRT* whose tree grows one waypoint at a time along the 8 compass directions.

    Rewiring may join nodes up to ``rewire_radius`` cells apart with a straight
    run; the returned path expands those runs into single steps.
    """
    grid = delays.grid
    start, goal = grid.check_node(start), grid.check_node(goal)
    if start == goal:
        return [start]
    in_tree, parent, pdir, psteps, _ = rrt_star_tree(delays, start, goal, params, weights)
    g = grid.index(goal)
    if not in_tree[g]:
        raise UnreachableError(f"RRT* tree never reached {goal} in {params.iterations} iterations")
    rev = [goal]
    x = g
    s = grid.index(start)
    while x != s:
        k, st = int(pdir[x]), int(psteps[x])
        dr, dc = OFFSETS[k]
        r, c = grid.node(x)
        for t in range(1, st + 1):
            rev.append((r - dr * t, c - dc * t))
        x = int(parent[x])
    rev.reverse()
    return _erase_loops(rev)


# --- metrics ----------------------------------------------------------------

@dataclass
class PathMetrics:
    length_m: float
    hops: int
    normalized_cost: int
    layer_costs: dict[str, int] = field(default_factory=dict)


class PathCoster:
    """Prices paths against fixed fields; quantizes them once up front."""

    def __init__(self, delays: DelayField, layers: CostLayerSet | None = None,
                 spacing: float | None = None):
        self.grid = delays.grid
        self.spacing = self.grid.spacing if spacing is None else float(spacing)
        self.q = delays.quantized()
        self.lq = {} if layers is None else {n: f.quantized() for n, f in layers.layers.items()}

    def __call__(self, path: list[NodeId]) -> PathMetrics:
        grid = self.grid
        length = 0.0
        total = 0
        per = dict.fromkeys(self.lq, 0)
        diag = self.spacing * math.sqrt(2.0)
        for a, b in zip(path, path[1:]):
            k = direction_between(b, a)  # slot at b pointing back to a
            if not grid.edge_mask[b[0], b[1], k]:
                raise InputError(f"no edge between {a} and {b}")
            length += diag if k.is_diagonal else self.spacing
            total += int(self.q[b[0], b[1], k])
            for n, arr in self.lq.items():
                per[n] += int(arr[b[0], b[1], k])
        return PathMetrics(length, len(path) - 1, total, per)


def path_metrics(delays: DelayField, layers: CostLayerSet | None, path: list[NodeId],
                 spacing: float | None = None) -> PathMetrics:
    """Length in metres and summed quantized delays into each successive node."""
    return PathCoster(delays, layers, spacing)(path)


def is_valid_path(grid: GridSpec, path: list[NodeId], start: NodeId, goal: NodeId) -> bool:
    if not path or path[0] != start or path[-1] != goal or len(set(path)) != len(path):
        return False
    return all(grid.is_traversable(n) for n in path) and all(
        chebyshev(a, b) == 1 for a, b in zip(path, path[1:]))
