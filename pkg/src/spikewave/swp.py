"""Spiking wavefront planner.

Each traversable cell is a neuron. A spike from neighbour ``j`` reaches
neuron ``i`` after the integer delay ``D_ij`` has counted down, so the first
spike time of every neuron is its least-cost arrival time (edge weight
``D + 1``). The neighbour whose delivery triggered a neuron's first spike is
recorded as its parent; following parents back from the goal gives the path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InputError, InvariantError, UnreachableError
from .lattice import DelayField, GridSpec, NodeId, OFFSETS

BETA = -10.0
TAU = 25.0
HOP_LATENCY_MAX = 11  # D_max + 1


@numba.njit(cache=True)
def _step_kernel(src, dq, v, u, d, trace, spike_time, parent_dir, fired, t, beta, tau):
    """Advance the network from ``t`` to ``t + 1`` in place.

    ``fired`` holds the neurons that spiked at ``t`` on entry and those that
    spike at ``t + 1`` on exit. Returns the number of new spikes.
    """
    n = src.shape[0]
    new = np.zeros(n, dtype=np.bool_)
    n_new = 0
    for i in range(n):
        current = 0.0
        first = -1
        for k in range(8):
            j = src[i, k]
            if j < 0:
                continue
            if d[i, k] == 1:
                current += 1.0
                if first < 0:
                    first = k
            if fired[j]:
                d[i, k] = dq[i, k]
            elif d[i, k] > 0:
                d[i, k] -= 1
        v[i] = u[i] + current
        if v[i] >= 1.0 and spike_time[i] < 0:
            new[i] = True
            n_new += 1
            spike_time[i] = t + 1
            parent_dir[i] = first
            u[i] = beta
            trace[i] = 1.0
        else:
            u[i] = min(u[i] + 1.0, 0.0)
            trace[i] -= trace[i] / tau
    for i in range(n):
        fired[i] = new[i]
    return n_new


@numba.njit(cache=True)
def _any_pending(d):
    for x in d.ravel():
        if x > 0:
            return True
    return False


@numba.njit(cache=True)
def _wave_kernel(src, dq, start, goal, max_steps, beta, tau):
    n = src.shape[0]
    v = np.zeros(n)
    u = np.zeros(n)
    d = np.zeros((n, 8), dtype=np.int64)
    trace = np.zeros(n)
    spike_time = np.full(n, -1, dtype=np.int64)
    parent_dir = np.full(n, -1, dtype=np.int64)
    fired = np.zeros(n, dtype=np.bool_)
    v[start] = 1.0
    u[start] = beta
    trace[start] = 1.0
    spike_time[start] = 0
    fired[start] = True
    t = 0
    while t < max_steps:
        if goal >= 0 and spike_time[goal] >= 0:
            break
        n_new = _step_kernel(src, dq, v, u, d, trace, spike_time, parent_dir, fired, t, beta, tau)
        t += 1
        if n_new == 0 and not _any_pending(d):
            break
    return spike_time, parent_dir, trace, t


@dataclass
class NetworkState:
    """Vectorised neuron state over a grid, indexed by flat node index."""
    v: np.ndarray
    u: np.ndarray
    countdown: np.ndarray   # (N, 8) integer
    trace: np.ndarray
    spike_time: np.ndarray  # -1 until first spike
    parent_dir: np.ndarray  # direction toward the parent, -1 if none
    fired: np.ndarray       # spiked at the current step

    @classmethod
    def initial(cls, grid: GridSpec, start: NodeId, beta: float = BETA) -> "NetworkState":
        n = grid.width * grid.height
        s = cls(np.zeros(n), np.zeros(n), np.zeros((n, 8), dtype=np.int64), np.zeros(n),
                np.full(n, -1, dtype=np.int64), np.full(n, -1, dtype=np.int64),
                np.zeros(n, dtype=bool))
        i = grid.index(start)
        s.v[i] = 1.0
        s.u[i] = beta
        s.trace[i] = 1.0
        s.spike_time[i] = 0
        s.fired[i] = True
        return s

    def copy(self) -> "NetworkState":
        return NetworkState(*(a.copy() for a in (self.v, self.u, self.countdown, self.trace,
                                                  self.spike_time, self.parent_dir, self.fired)))


def step_network(state: NetworkState, delays_q: np.ndarray, grid: GridSpec, t: int,
                 beta: float = BETA, tau: float = TAU) -> tuple[NetworkState, list[NodeId]]:
    """One synchronous update ``t -> t+1``; returns the new state and the nodes that spiked."""
    s = state.copy()
    dq = np.ascontiguousarray(delays_q.reshape(-1, 8), dtype=np.int64)
    _step_kernel(grid.edge_source, dq, s.v, s.u, s.countdown, s.trace, s.spike_time,
                 s.parent_dir, s.fired, int(t), float(beta), float(tau))
    return s, [grid.node(i) for i in np.flatnonzero(s.fired)]


@dataclass(frozen=True)
class WaveResult:
    grid: GridSpec
    start: NodeId
    goal: NodeId | None
    goal_arrival: int | None
    spike_times: np.ndarray   # (H, W), -1 where the neuron never spiked
    parent_dir: np.ndarray    # (H, W), direction to parent, -1 where none
    tau: float = TAU

    def spiked(self, node: NodeId) -> bool:
        return self.spike_times[node] >= 0

    def spike_time(self, node: NodeId) -> int:
        t = int(self.spike_times[node])
        if t < 0:
            raise KeyError(node)
        return t

    def parent(self, node: NodeId) -> NodeId | None:
        k = int(self.parent_dir[node])
        if k < 0:
            return None
        dr, dc = OFFSETS[k]
        return (node[0] + dr, node[1] + dc)

    def spiked_nodes(self) -> list[NodeId]:
        rows, cols = np.nonzero(self.spike_times >= 0)
        return list(zip(rows.tolist(), cols.tolist()))

    @property
    def eligibility(self) -> np.ndarray:
        """Traces frozen at goal arrival, ``(1 - 1/tau)^(T - t_spike)``; 0 if never spiked."""
        if self.goal_arrival is None:
            raise InputError("wave was not run toward a goal")
        dt = self.goal_arrival - self.spike_times
        e = np.power(1.0 - 1.0 / self.tau, dt.astype(float))
        return np.where((self.spike_times >= 0) & (dt >= 0), e, 0.0)

    def eligibility_of(self, node: NodeId) -> float:
        if not self.spiked(node) or self.spike_times[node] > self.goal_arrival:
            raise KeyError(node)
        return float(self.eligibility[node])

    def raster_csv(self) -> str:
        """Debug dump: one ``row,col,spike_time,eligibility`` line per spiked neuron."""
        lines = ["row,col,spike_time,eligibility"]
        e = self.eligibility if self.goal_arrival is not None else None
        order = sorted(self.spiked_nodes(), key=lambda n: (self.spike_times[n], n))
        for n in order:
            el = "" if e is None else f"{e[n]:.12f}"
            lines.append(f"{n[0]},{n[1]},{int(self.spike_times[n])},{el}")
        return "\n".join(lines) + "\n"


def _run(delays: DelayField, start: NodeId, goal: NodeId | None, max_steps: int | None,
         beta: float, tau: float):
    grid = delays.grid
    start = grid.check_node(start)
    if goal is not None:
        goal = grid.check_node(goal)
        if goal == start:
            raise InputError("start and goal coincide")
    delays.validate()
    if max_steps is None:
        max_steps = grid.node_count * HOP_LATENCY_MAX
    dq = delays.quantized().reshape(-1, 8)
    goal_idx = -1 if goal is None else grid.index(goal)
    spike_time, parent_dir, trace, steps = _wave_kernel(
        grid.edge_source, dq, grid.index(start), goal_idx, int(max_steps), float(beta), float(tau))
    return grid, start, goal, spike_time.reshape(grid.shape), parent_dir.reshape(grid.shape), trace


def propagate(delays: DelayField, start: NodeId, goal: NodeId, max_steps: int | None = None,
              beta: float = BETA, tau: float = TAU) -> WaveResult:
    """Inject a spike at ``start`` and simulate until ``goal`` fires.

    Raises :class:`UnreachableError` if the wave dies out or ``max_steps``
    (default ``node_count * 11``) elapse first.
    """
    grid, start, goal, st, pd, _ = _run(delays, start, goal, max_steps, beta, tau)
    if st[goal] < 0:
        raise UnreachableError(f"wave from {start} never reached {goal}")
    return WaveResult(grid, start, goal, int(st[goal]), st, pd, tau)


def propagate_with_trace(delays: DelayField, start: NodeId, goal: NodeId,
                         max_steps: int | None = None, beta: float = BETA,
                         tau: float = TAU) -> tuple[WaveResult, np.ndarray]:
    """:func:`propagate` plus the per-step iterated eligibility traces at goal arrival."""
    grid, start, goal, st, pd, trace = _run(delays, start, goal, max_steps, beta, tau)
    if st[goal] < 0:
        raise UnreachableError(f"wave from {start} never reached {goal}")
    return WaveResult(grid, start, goal, int(st[goal]), st, pd, tau), trace.reshape(grid.shape)


def flood(delays: DelayField, start: NodeId, beta: float = BETA, tau: float = TAU) -> WaveResult:
    """Run the wave from ``start`` until it dies out, so every reachable node fires.

    Spike times and parents agree with :func:`propagate` for any goal, because
    halting at the goal never alters events that happened before it.
    """
    grid, start, _, st, pd, _ = _run(delays, start, None, None, beta, tau)
    return WaveResult(grid, start, None, None, st, pd, tau)


def extract_path(wave: WaveResult, goal: NodeId | None = None) -> list[NodeId]:
    """Trace parents back from the goal and return the path start -> goal."""
    goal = wave.goal if goal is None else goal
    if goal is None:
        raise InputError("no goal given")
    if not wave.spiked(goal):
        raise UnreachableError(f"{goal} never spiked")
    path = [goal]
    limit = wave.grid.width * wave.grid.height
    node = goal
    while node != wave.start:
        prev = wave.parent(node)
        if prev is None or not wave.spiked(prev) or wave.spike_times[prev] >= wave.spike_times[node]:
            raise InvariantError(f"broken parent chain at {node}")
        path.append(prev)
        node = prev
        if len(path) > limit:
            raise InvariantError("parent chain has a cycle")
    path.reverse()
    return path


def plan(delays: DelayField, start: NodeId, goal: NodeId) -> list[NodeId]:
    return extract_path(propagate(delays, start, goal))
