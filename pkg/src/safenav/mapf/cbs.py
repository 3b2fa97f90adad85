"""Conflict detection and Conflict-Based Search over a roadmap."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from safenav.mapf.search import (Constraint, NoPath, TimedPath, heuristic_table, path_weight,
                                 shortest_path, space_time_astar)
from safenav.roadmap import EdgeMode, Roadmap

RHO_CONFLICT = 2.0
CBS_BUDGET = 50_000
# pairs of agent groups that conflict this often are merged and planned jointly
MERGE_THRESHOLD = 16
# merging only when (2 * n_nodes) ** group_size stays under this
MERGE_STATE_LIMIT = 100_000


class Infeasible(ValueError):
    """Raised when no conflict-free plan exists (or an agent cannot reach its goal at all)."""


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentTask:
    id: int
    start: int
    goal: int


@dataclass
class MapfProblem:
    agents: list[AgentTask]
    mode: EdgeMode = field(default_factory=EdgeMode)
    rho_conflict: float = RHO_CONFLICT

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        if self.rho_conflict < 0:
            raise ValueError("conflict radius must be nonnegative")


@dataclass(frozen=True)
class Conflict:
    """``vertex``: agents at ``nodes`` are too close at ``t``.
    ``edge``: agent ``agents[0]`` moves ``nodes[0] -> nodes[1]`` while the other
    moves back, between ``t`` and ``t + 1``."""

    kind: str
    agents: tuple[int, int]
    nodes: tuple[int, int]
    t: int


@dataclass
class MultiAgentPlan:
    paths: dict[int, TimedPath]
    mode: EdgeMode
    expansions: int = 0

    @property
    def sum_of_costs(self) -> float:
        return float(sum(p.weight for p in self.paths.values()))

    @property
    def makespan(self) -> int:
        return max((p.steps for p in self.paths.values()), default=0)

    def to_json(self, rm: Roadmap, graph_digest: str = "") -> dict:
        out = []
        for aid in sorted(self.paths):
            p = self.paths[aid]
            out.append({"id": aid, "waypoints": [[float(rm.nodes[v][0]), float(rm.nodes[v][1]), t]
                                                 for t, v in enumerate(p.nodes)],
                        "weight": p.weight})
        return {"mode": self.mode.kind, "alpha": self.mode.alpha, "graph_digest": graph_digest,
                "sum_of_costs": self.sum_of_costs, "paths": out}


def close_matrix(rm: Roadmap, rho: float) -> np.ndarray:
    """``close[a, b]``: agents on nodes ``a`` and ``b`` at once are in vertex conflict."""
    diff = rm.nodes[:, None, :] - rm.nodes[None, :, :]
    close = np.hypot(diff[..., 0], diff[..., 1]) < rho
    np.fill_diagonal(close, True)
    return close


def _too_close(rm: Roadmap, a: int, b: int, rho: float) -> bool:
    if a == b:
        return True
    p, q = rm.nodes[a], rm.nodes[b]
    return float(np.hypot(p[0] - q[0], p[1] - q[1])) < rho


def detect_conflicts(paths: dict[int, TimedPath] | list[TimedPath], rm: Roadmap,
                     rho: float = RHO_CONFLICT, close: np.ndarray | None = None) -> Conflict | None:
    """Earliest conflict among ``paths`` (agents stay parked at their final node), or ``None``.

    At each timestep vertex conflicts are checked before swaps leaving that
    timestep; pairs are scanned in agent-id order.
    """
    if not isinstance(paths, dict):
        paths = dict(enumerate(paths))
    ids = sorted(paths)
    near = (lambda a, b: bool(close[a, b])) if close is not None else (
        lambda a, b: _too_close(rm, a, b, rho))
    horizon = max((paths[i].steps for i in ids), default=0)
    for t in range(horizon + 1):
        for i, j in itertools.combinations(ids, 2):
            a, b = paths[i].at(t), paths[j].at(t)
            if near(a, b):
                return Conflict("vertex", (i, j), (a, b), t)
        if t == horizon:
            break
        for i, j in itertools.combinations(ids, 2):
            a0, a1 = paths[i].at(t), paths[i].at(t + 1)
            b0, b1 = paths[j].at(t), paths[j].at(t + 1)
            if a0 != a1 and a0 == b1 and a1 == b0:
                return Conflict("edge", (i, j), (a0, a1), t)
    return None


def _branch(c: Conflict) -> tuple[Constraint, Constraint]:
    i, j = c.agents
    a, b = c.nodes
    if c.kind == "vertex":
        return Constraint(i, a, c.t), Constraint(j, b, c.t)
    return Constraint(i, b, c.t + 1, from_node=a), Constraint(j, a, c.t + 1, from_node=b)


def default_horizon(rm: Roadmap, problem: MapfProblem) -> int:
    """Four times the longest unconstrained hop count."""
    longest = 1
    for a in problem.agents:
        try:
            longest = max(longest, len(shortest_path(rm, a.start, a.goal, problem.mode)[0]) - 1)
        except NoPath:
            pass
    return 4 * max(longest, 1)


def _group_search(rm: Roadmap, tasks: list[AgentTask], cons, mode: EdgeMode, adj, hs, close,
                  max_states: int) -> dict[int, TimedPath]:
    """Optimal joint timed paths for a group of agents under their CBS constraints.

    Each member waits, moves, or parks on its goal (free from then on, allowed
    only once no vertex constraint remains on the goal).  Time is merged past the
    latest constraint, as in the single-agent search.
    """
    k = len(tasks)
    ids = [a.id for a in tasks]
    goals = [a.goal for a in tasks]
    vertex = [{(c.node, c.t) for c in cons if c.agent == aid and c.from_node is None} for aid in ids]
    edge = [{(c.from_node, c.node, c.t) for c in cons if c.agent == aid and c.from_node is not None}
            for aid in ids]
    goal_block = [max((t for v, t in vertex[i] if v == goals[i]), default=-1) for i in range(k)]
    cap = max((c.t for c in cons if c.agent in ids), default=-1) + 1
    wait = mode.wait_cost

    def h_of(nodes, parked):
        return sum(0.0 if parked[i] else float(hs[i][nodes[i]]) for i in range(k))

    def options(i, u, parked, t2):
        if parked:
            return [(u, 0.0, True)]
        out = []
        if (u, t2) not in vertex[i]:
            out.append((u, wait, False))
            if u == goals[i] and goal_block[i] < t2:
                out.append((u, 0.0, True))
        out.extend((v, w, False) for v, w in adj[u]
                   if (v, t2) not in vertex[i] and (u, v, t2) not in edge[i] and math.isfinite(hs[i][v]))
        return out

    nodes0 = tuple(a.start for a in tasks)
    if any((nodes0[i], 0) in vertex[i] for i in range(k)):
        raise NoPath("a group member is constrained at its start")
    start = (nodes0, (False,) * k, 0)
    if not math.isfinite(h_of(nodes0, start[1])):
        raise NoPath("some group member cannot reach its goal")
    counter = itertools.count()
    heap = [(h_of(nodes0, start[1]), 0, next(counter), start, 0.0)]
    best = {start: 0.0}
    parent = {start: None}
    closed = set()
    while heap:
        _, t, _, state, g = heapq.heappop(heap)
        if state in closed:
            continue
        closed.add(state)
        if len(closed) > max_states:
            raise BudgetExceeded("joint group search exceeded its state limit")
        nodes, parked, _ = state
        if all(parked):
            return _group_paths(state, parent, ids, goals, rm, mode)
        t2 = t + 1
        for combo in itertools.product(*(options(i, nodes[i], parked[i], t2) for i in range(k))):
            nn = tuple(c[0] for c in combo)
            if any(close[nn[a], nn[b]] or (nn[a] != nodes[a] and nn[a] == nodes[b] and nn[b] == nodes[a])
                   for a, b in itertools.combinations(range(k), 2)):
                continue
            s2 = (nn, tuple(c[2] for c in combo), min(t2, cap))
            if s2 in closed:
                continue
            g2 = g + sum(c[1] for c in combo)
            if g2 < best.get(s2, math.inf):
                best[s2] = g2
                parent[s2] = state
                heapq.heappush(heap, (g2 + h_of(nn, s2[1]), t2, next(counter), s2, g2))
    raise NoPath("no joint timed path for the group")


def _group_paths(state, parent, ids, goals, rm, mode) -> dict[int, TimedPath]:
    seq = []
    while state is not None:
        seq.append(state[0])
        state = parent[state]
    seq.reverse()
    out = {}
    for i, aid in enumerate(ids):
        nodes = [s[i] for s in seq]
        while len(nodes) > 1 and nodes[-2] == nodes[-1] == goals[i]:
            nodes.pop()
        out[aid] = TimedPath(nodes, path_weight(rm, nodes, mode))
    return out


def cbs(rm: Roadmap, problem: MapfProblem, budget: int = CBS_BUDGET,
        horizon: int | None = None, merge_threshold: int = MERGE_THRESHOLD) -> MultiAgentPlan:
    """Best-first constraint-tree search minimizing the sum of per-agent path weights.

    Constraint-tree nodes are ordered by (objective, number of constraints,
    creation order).  Termination on unsolvable or plateau-heavy instances is
    only guaranteed when every move and wait has positive weight; with free
    waits (cost mode) equal-weight nodes that merely postpone an arrival can be
    generated without end, and the expansion budget is what stops the search.
    The low-level horizon always extends past the latest constraint so deferred
    arrivals remain reachable.

    Two groups of agents that conflict more than ``merge_threshold`` times are
    merged into one group planned by joint search, and the search restarts from
    a fresh root (merge-and-restart).  Merging happens only when the joint
    search over the merged group is small; the result stays optimal either way.
    """
    mode = problem.mode
    adj = rm.adjacency(mode)
    tasks = {a.id: a for a in problem.agents}
    h = {a.id: heuristic_table(rm, a.goal, mode) for a in problem.agents}
    base_h = horizon if horizon is not None else default_horizon(rm, problem)
    close = close_matrix(rm, problem.rho_conflict)
    group_of = {aid: (aid,) for aid in tasks}

    def plan(aid: int, cons: tuple[Constraint, ...]) -> dict[int, TimedPath]:
        group = group_of[aid]
        if len(group) > 1:
            return _group_search(rm, [tasks[a] for a in group], cons, mode, adj,
                                 [h[a] for a in group], close, MERGE_STATE_LIMIT * 10)
        mine = [c for c in cons if c.agent == aid]
        t_last = max((c.t for c in mine), default=0)
        hz = max(base_h, t_last + 1 + rm.n_nodes)
        return {aid: space_time_astar(rm, tasks[aid].start, tasks[aid].goal, mine, mode, hz, h[aid], adj)}

    for x, y in itertools.combinations(problem.agents, 2):
        if close[x.start, y.start]:
            raise Infeasible(f"starts of agents {x.id} and {y.id} are in conflict")
        if close[x.goal, y.goal]:
            raise Infeasible(f"goals of agents {x.id} and {y.id} are in conflict")
    expansions = 0
    while True:
        try:
            root_paths = {}
            for g in set(group_of.values()):
                root_paths.update(plan(g[0], ()))
        except NoPath as exc:
            raise Infeasible(f"root infeasible: {exc}") from exc
        counter = itertools.count()
        open_list = [(sum(p.weight for p in root_paths.values()), 0, next(counter), (), root_paths)]
        pair_conflicts: dict[tuple, int] = {}
        merged = False
        while open_list:
            cost, _, _, cons, paths = heapq.heappop(open_list)
            conflict = detect_conflicts(paths, rm, problem.rho_conflict, close)
            if conflict is None:
                return MultiAgentPlan(paths, mode, expansions)
            expansions += 1
            if expansions > budget:
                raise BudgetExceeded(f"CBS exceeded {budget} node expansions")
            gi, gj = (group_of[a] for a in conflict.agents)
            pair = (min(gi, gj), max(gi, gj))
            pair_conflicts[pair] = pair_conflicts.get(pair, 0) + 1
            if (pair_conflicts[pair] > merge_threshold
                    and (2 * rm.n_nodes) ** (len(gi) + len(gj)) <= MERGE_STATE_LIMIT):
                group = tuple(sorted(gi + gj))
                for a in group:
                    group_of[a] = group
                merged = True
                break
            for con in _branch(conflict):
                child = cons + (con,)
                try:
                    newp = plan(con.agent, child)
                except NoPath:
                    continue
                child_paths = dict(paths)
                child_paths.update(newp)
                child_cost = sum(p.weight for p in child_paths.values())
                heapq.heappush(open_list, (child_cost, len(child), next(counter), child, child_paths))
        if not merged:
            raise Infeasible("no conflict-free plan exists")
