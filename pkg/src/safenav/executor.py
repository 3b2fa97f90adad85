"""Closed-loop execution of waypoint plans with a goal-conditioned policy."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from safenav import envsim, oracle
from safenav.gcrl.agent import Agent

EPS_WP = 1.0
RHO_AGENT = 2.0
STEPS_PER_WAYPOINT = 20

TRAJ_COLUMNS = ["run_id", "agent_id", "t", "x", "y", "cost", "waypoint_idx", "done"]


@dataclass
class AgentResult:
    agent_id: int
    success: bool
    steps: int
    cum_cost: float


@dataclass
class RunMetrics:
    agents: list[AgentResult] = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([a.cum_cost for a in self.agents])

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.costs)) if self.agents else math.nan

    @property
    def std_cost(self) -> float:
        """Sample standard deviation; 0 for a single agent."""
        return float(np.std(self.costs, ddof=1)) if len(self.agents) > 1 else 0.0

    @property
    def success_rate(self) -> float:
        return float(np.mean([a.success for a in self.agents])) if self.agents else math.nan


@dataclass
class Trajectory:
    """Per-step record for one agent; row 0 is the start position with zero cost."""

    agent_id: int
    t: list[int] = field(default_factory=list)
    pos: list[tuple[float, float]] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    waypoint_idx: list[int] = field(default_factory=list)
    done: list[bool] = field(default_factory=list)

    def record(self, t: int, p, c: float, wp: int, done: bool) -> None:
        self.t.append(t)
        self.pos.append((float(p[0]), float(p[1])))
        self.cost.append(float(c))
        self.waypoint_idx.append(int(wp))
        self.done.append(bool(done))

    @property
    def positions(self) -> np.ndarray:
        return np.array(self.pos).reshape(-1, 2)

    def __len__(self):
        return len(self.t)


def write_trajectories(path: str | Path, runs) -> None:
    """``runs`` is an iterable of ``(run_id, [Trajectory, ...])``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJ_COLUMNS)
        for run_id, trajs in runs:
            for tr in trajs:
                for k in range(len(tr)):
                    x, y = tr.pos[k]
                    w.writerow([run_id, tr.agent_id, tr.t[k], repr(x), repr(y), repr(tr.cost[k]),
                                tr.waypoint_idx[k], int(tr.done[k])])


def read_trajectories(path: str | Path) -> dict[str, list[Trajectory]]:
    runs: dict[str, dict[int, Trajectory]] = {}
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        if r.fieldnames is None or list(r.fieldnames) != TRAJ_COLUMNS:
            raise ValueError(f"trajectory CSV must have columns {TRAJ_COLUMNS}")
        for row in r:
            aid = int(row["agent_id"])
            tr = runs.setdefault(row["run_id"], {}).setdefault(aid, Trajectory(aid))
            tr.record(int(row["t"]), (float(row["x"]), float(row["y"])), float(row["cost"]),
                      int(row["waypoint_idx"]), row["done"] in ("1", "True", "true"))
    return {k: [v[a] for a in sorted(v)] for k, v in runs.items()}


def _dist(p, q) -> float:
    return float(math.hypot(p[0] - q[0], p[1] - q[1]))


def follow_single(m: envsim.Map, agent: Agent, start, waypoints, budget: int | None = None,
                  eps_wp: float = EPS_WP, goal_tol: float = envsim.GOAL_TOL,
                  agent_id: int = 0) -> tuple[Trajectory, AgentResult]:
    """Drive toward each waypoint in turn, switching once within ``eps_wp``.

    Arrival is checked before every step, so a start already at the goal costs nothing.
    """
    wps = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if len(wps) == 0:
        raise ValueError("waypoint list is empty")
    if budget is None:
        budget = STEPS_PER_WAYPOINT * (len(wps) + 1)
    pos = np.asarray(start, dtype=float).copy()
    idx, steps, total = 0, 0, 0.0
    last = len(wps) - 1
    tr = Trajectory(agent_id)

    def advance():
        nonlocal idx
        while idx < last and _dist(pos, wps[idx]) <= eps_wp:
            idx += 1
        return idx == last and _dist(pos, wps[last]) <= goal_tol

    done = advance()
    tr.record(0, pos, 0.0, idx, done)
    while not done and steps < budget:
        a = agent.policy(pos, wps[idx])[0]
        pos = envsim.move(m, pos, a)
        c = envsim.step_cost(m, pos)
        total += c
        steps += 1
        done = advance()
        tr.record(steps, pos, c, idx, done)
    return tr, AgentResult(agent_id, done, steps, total)


def follow_multi(m: envsim.Map, agent: Agent, starts: dict[int, np.ndarray],
                 plans: dict[int, np.ndarray], rho_agent: float = RHO_AGENT,
                 eps_wp: float = EPS_WP, goal_tol: float = envsim.GOAL_TOL,
                 budget: int | None = None) -> tuple[list[Trajectory], RunMetrics]:
    """Synchronous execution of timed waypoint sequences, one per agent id.

    A shared plan clock ``k`` advances only once every unfinished agent has come
    within ``eps_wp`` of its step-``k`` waypoint; an agent that is already there
    holds still.  Wait rule: an agent emits a zero action if a smaller-id
    unfinished agent that moves this step is within ``rho_agent`` of it, either
    now or after both moves.  Finished agents stop and accrue no further cost.
    """
    ids = sorted(plans)
    if set(ids) != set(starts):
        raise ValueError("starts and plans must cover the same agent ids")
    wps = {i: np.asarray(plans[i], dtype=float).reshape(-1, 2) for i in ids}
    if any(len(w) == 0 for w in wps.values()):
        raise ValueError("every agent needs at least one waypoint")
    longest = max(len(w) for w in wps.values())
    if budget is None:
        budget = STEPS_PER_WAYPOINT * (longest + 1)
    pos = {i: np.asarray(starts[i], dtype=float).copy() for i in ids}
    done = {i: False for i in ids}
    cost = {i: 0.0 for i in ids}
    steps = {i: 0 for i in ids}
    trajs = {i: Trajectory(i) for i in ids}
    k = 0

    def target(i):
        return min(k, len(wps[i]) - 1)

    def at_target(i):
        return _dist(pos[i], wps[i][target(i)]) <= eps_wp

    def refresh():
        nonlocal k
        for i in ids:
            if not done[i] and k >= len(wps[i]) - 1 and _dist(pos[i], wps[i][-1]) <= goal_tol:
                done[i] = True
        while k < longest - 1 and all(done[i] or at_target(i) for i in ids):
            k += 1
            for i in ids:
                if not done[i] and k >= len(wps[i]) - 1 and _dist(pos[i], wps[i][-1]) <= goal_tol:
                    done[i] = True

    refresh()
    for i in ids:
        trajs[i].record(0, pos[i], 0.0, target(i), done[i])
    t = 0
    while not all(done.values()) and t < budget:
        active = [i for i in ids if not done[i]]
        movers = [i for i in active if not at_target(i)]
        if movers:
            acts = agent.policy(np.stack([pos[i] for i in movers]),
                                np.stack([wps[i][target(i)] for i in movers]))
        proposal = {i: envsim.move(m, pos[i], a) for i, a in zip(movers, acts)} if movers else {}
        moved: list[int] = []
        for i in movers:
            blocked = any(j < i and (_dist(pos[j], pos[i]) <= rho_agent
                                     or _dist(proposal[j], proposal[i]) <= rho_agent)
                          for j in moved)
            if not blocked:
                moved.append(i)
        for i in moved:
            pos[i] = proposal[i]
        t += 1
        step_c = {}
        for i in active:
            c = envsim.step_cost(m, pos[i])
            cost[i] += c
            steps[i] += 1
            step_c[i] = c
        refresh()
        for i in active:
            trajs[i].record(t, pos[i], step_c[i], target(i), done[i])
    metrics = RunMetrics([AgentResult(i, done[i], steps[i], cost[i]) for i in ids])
    return [trajs[i] for i in ids], metrics


def policy_budget(m: envsim.Map, start, goal) -> int:
    d = oracle.oracle_distance(m, start, goal)
    return STEPS_PER_WAYPOINT * (1 + math.ceil(d / 10.0))


def run_policy_only(m: envsim.Map, agent: Agent, problems, goal_tol: float = envsim.GOAL_TOL,
                    budgets: list[int] | None = None) -> tuple[list[Trajectory], RunMetrics]:
    """Roll the actor straight at each single-agent goal.

    ``problems`` is a list of ``(start, goal)`` pairs.  Every run takes at least
    one step; success means ending a step within ``goal_tol`` of the goal.
    """
    trajs, results = [], []
    for n, prob in enumerate(problems):
        if len(prob) != 2 or np.ndim(prob[0]) != 1:
            raise ValueError("policy-only execution supports single-agent problems only")
        start, goal = (np.asarray(p, dtype=float) for p in prob)
        budget = budgets[n] if budgets is not None else policy_budget(m, start, goal)
        state = envsim.EnvState(start.copy(), goal.copy(), 0)
        tr = Trajectory(n)
        tr.record(0, start, 0.0, 0, False)
        total, reached = 0.0, False
        for k in range(budget):
            res = envsim.step(state, agent.policy(state.position, goal)[0], m, goal_tol, budget + 1)
            state = res.next_state
            total += res.cost
            reached = res.reached
            tr.record(k + 1, state.position, res.cost, 0, reached)
            if reached:
                break
        trajs.append(tr)
        results.append(AgentResult(n, reached, len(tr) - 1, total))
    return trajs, RunMetrics(results)
