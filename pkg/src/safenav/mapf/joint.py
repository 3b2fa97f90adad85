"""Joint-state A* over all agents at once: an exact but exponential reference planner."""

from __future__ import annotations

import heapq
import itertools
import math

from safenav.mapf.cbs import Infeasible, MapfProblem, MultiAgentPlan, close_matrix
from safenav.mapf.search import TimedPath, heuristic_table, path_weight
from safenav.roadmap import Roadmap

MAX_AGENTS = 4
MAX_STATES = 500_000


class StateSpaceExceeded(RuntimeError):
    pass


def joint_astar(rm: Roadmap, problem: MapfProblem, max_states: int = MAX_STATES) -> MultiAgentPlan:
    """Optimal sum-of-costs plan under the same conflict rules and objective as :func:`cbs`.

    A joint state holds every agent's node and a ``parked`` flag.  An agent on its
    goal may park, after which it stays for free; otherwise it waits at
    ``mode.wait_cost`` or moves along an edge.  The search ends once every agent
    is on its goal.
    """
    agents = problem.agents
    k = len(agents)
    if k > MAX_AGENTS:
        raise StateSpaceExceeded(f"joint search supports at most {MAX_AGENTS} agents")
    if (rm.n_nodes * 2) ** k > 50 * max_states:
        raise StateSpaceExceeded("joint state space too large")
    mode = problem.mode
    adj = rm.adjacency(mode)
    close = close_matrix(rm, problem.rho_conflict)
    goals = [a.goal for a in agents]
    hs = [heuristic_table(rm, g, mode) for g in goals]
    wait = mode.wait_cost

    start = (tuple(a.start for a in agents), (False,) * k)
    if any(close[a, b] for a, b in itertools.combinations(start[0], 2)):
        raise Infeasible("starts are in conflict")
    if any(close[a, b] for a, b in itertools.combinations(goals, 2)):
        raise Infeasible("goals are in conflict")

    def h_of(state):
        nodes, parked = state
        return sum(0.0 if parked[i] else hs[i][nodes[i]] for i in range(k))

    if not math.isfinite(h_of(start)):
        raise Infeasible("some goal is unreachable")

    def options(i, node, parked):
        if parked:
            return [(node, 0.0, True)]
        out = [(node, wait, False)]
        if node == goals[i]:
            out.append((node, 0.0, True))
        out.extend((v, w, False) for v, w in adj[node] if math.isfinite(hs[i][v]))
        return out

    counter = itertools.count()
    heap = [(h_of(start), 0, next(counter), start, 0.0)]
    best = {start: 0.0}
    parent = {start: None}
    closed = set()
    while heap:
        _, t, _, state, g = heapq.heappop(heap)
        if state in closed:
            continue
        closed.add(state)
        if len(closed) > max_states:
            raise StateSpaceExceeded(f"joint search expanded more than {max_states} states")
        nodes, parked = state
        if all(n == gl for n, gl in zip(nodes, goals)):
            return _plan(state, parent, agents, rm, problem)
        opts = [options(i, nodes[i], parked[i]) for i in range(k)]
        for combo in _joint_moves(opts, nodes, close):
            nn = tuple(c[0] for c in combo)
            pp = tuple(c[2] for c in combo)
            s2 = (nn, pp)
            if s2 in closed:
                continue
            g2 = g + sum(c[1] for c in combo)
            if g2 < best.get(s2, math.inf):
                best[s2] = g2
                parent[s2] = state
                heapq.heappush(heap, (g2 + h_of(s2), t + 1, next(counter), s2, g2))
    raise Infeasible("no conflict-free joint plan exists")


def _joint_moves(opts, nodes, close):
    """Cartesian product of per-agent options, pruned for proximity and swap conflicts."""
    k = len(opts)
    chosen: list = []

    def rec(i):
        if i == k:
            yield tuple(chosen)
            return
        for o in opts[i]:
            v = o[0]
            ok = True
            for j, c in enumerate(chosen):
                if close[v, c[0]] or (v != nodes[i] and v == nodes[j] and c[0] == nodes[i]):
                    ok = False
                    break
            if ok:
                chosen.append(o)
                yield from rec(i + 1)
                chosen.pop()

    return rec(0)


def _plan(state, parent, agents, rm, problem) -> MultiAgentPlan:
    seq = []
    while state is not None:
        seq.append(state[0])
        state = parent[state]
    seq.reverse()
    paths = {}
    for i, a in enumerate(agents):
        nodes = [s[i] for s in seq]
        while len(nodes) > 1 and nodes[-2] == nodes[-1] == a.goal:
            nodes.pop()
        paths[a.id] = TimedPath(nodes, path_weight(rm, nodes, problem.mode))
    return MultiAgentPlan(paths, problem.mode)
