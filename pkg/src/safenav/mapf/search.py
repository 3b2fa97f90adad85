"""Single-agent graph search: Dijkstra and space-time A* under CBS constraints."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from safenav.roadmap import EdgeMode, Roadmap


class NoPath(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    """Agent ``agent`` may not be at ``node`` at time ``t``.

    With ``from_node`` set it is an edge constraint: only the move
    ``from_node -> node`` arriving at ``t`` is forbidden.
    """

    agent: int
    node: int
    t: int
    from_node: int | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("constraint time must be nonnegative")


@dataclass
class TimedPath:
    """Node occupied at each timestep ``0..len-1``; the agent parks on the last node afterwards."""

    nodes: list[int]
    weight: float

    def at(self, t: int) -> int:
        return self.nodes[min(t, len(self.nodes) - 1)]

    @property
    def steps(self) -> int:
        return len(self.nodes) - 1

    def timed(self) -> list[tuple[int, int]]:
        return [(v, t) for t, v in enumerate(self.nodes)]


def path_weight(rm: Roadmap, nodes: list[int], mode: EdgeMode) -> float:
    """Moves charged at their edge weight, waits at ``mode.wait_cost``; trailing parking is free."""
    end = len(nodes) - 1
    while end > 0 and nodes[end - 1] == nodes[-1]:
        end -= 1
    total = 0.0
    for u, v in zip(nodes[:end], nodes[1:end + 1]):
        total += mode.wait_cost if u == v else float(mode.weight(*rm.edge(u, v)))
    return total


def dijkstra(adj: list[list[tuple[int, float]]], src: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances and predecessors from ``src``; ties settle the smaller node index first."""
    n = len(adj)
    dist = np.full(n, math.inf)
    pred = np.full(n, -1, dtype=np.int64)
    dist[src] = 0.0
    heap = [(0.0, src)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def shortest_path(rm: Roadmap, src: int, dst: int, mode: EdgeMode) -> tuple[list[int], float]:
    """Minimum-weight node sequence from ``src`` to ``dst`` and its weight."""
    dist, pred = dijkstra(rm.adjacency(mode), src)
    if not math.isfinite(dist[dst]):
        raise NoPath(f"node {dst} unreachable from {src}")
    path = [dst]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    return path[::-1], float(dist[dst])


def heuristic_table(rm: Roadmap, goal: int, mode: EdgeMode) -> np.ndarray:
    """Exact distance-to-goal under ``mode`` (reverse Dijkstra), an admissible bound."""
    return dijkstra(rm.reverse_adjacency(mode), goal)[0]


def space_time_astar(rm: Roadmap, start: int, goal: int, constraints, mode: EdgeMode,
                     horizon: int | None = None, h: np.ndarray | None = None,
                     adj: list | None = None) -> TimedPath:
    """Least-weight timed path from ``start`` to a permanent stay at ``goal``.

    Each step either waits (``mode.wait_cost``) or traverses one edge.  Past the
    last constrained timestep the search is time-invariant, so states are merged
    there; this keeps the search finite even with zero-cost waits.  The result
    minimizes weight, then arrival time; remaining ties go to the smaller node
    index.
    """
    adj = adj if adj is not None else rm.adjacency(mode)
    h = h if h is not None else heuristic_table(rm, goal, mode)
    if not math.isfinite(h[start]):
        raise NoPath(f"goal {goal} unreachable from {start}")
    vertex: set[tuple[int, int]] = set()
    edge: set[tuple[int, int, int]] = set()
    goal_block = -1
    t_last = -1
    for c in constraints:
        if c.from_node is None:
            vertex.add((c.node, c.t))
            if c.node == goal:
                goal_block = max(goal_block, c.t)
        else:
            edge.add((c.from_node, c.node, c.t))
        t_last = max(t_last, c.t)
    if horizon is None:
        horizon = t_last + 1 + 4 * max(rm.n_nodes, 1)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if (start, 0) in vertex:
        raise NoPath("start is constrained at t=0")
    cap = t_last + 1

    def key(v, t):
        return v, min(t, cap)

    wait = mode.wait_cost
    heap = [(float(h[start]), 0, start, 0.0)]
    parent: dict[tuple[int, int], tuple[int, int] | None] = {key(start, 0): None}
    best: dict[tuple[int, int], tuple[float, int]] = {key(start, 0): (0.0, 0)}
    closed: set[tuple[int, int]] = set()
    while heap:
        f, t, u, g = heapq.heappop(heap)
        k = key(u, t)
        if k in closed:
            continue
        closed.add(k)
        if u == goal and t > goal_block:
            nodes = []
            while k is not None:
                nodes.append(k[0])
                k = parent[k]
            return TimedPath(nodes[::-1], g)
        if t >= horizon:
            continue
        t2 = t + 1
        for v, w in [(u, wait)] + adj[u]:
            if (v, t2) in vertex or (u, v, t2) in edge:
                continue
            k2 = key(v, t2)
            if k2 in closed or not math.isfinite(h[v]):
                continue
            g2 = g + w
            if (g2, t2) < best.get(k2, (math.inf, 0)):
                best[k2] = (g2, t2)
                parent[k2] = k
                heapq.heappush(heap, (g2 + float(h[v]), t2, v, g2))
    raise NoPath(f"no timed path from {start} to {goal} within horizon {horizon}")
