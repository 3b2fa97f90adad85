"""Benchmark problem generation, the four-method runner and summary statistics."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from safenav import envsim, executor, oracle
from safenav.gcrl.checkpoint import Checkpoint
from safenav.mapf import AgentTask, BudgetExceeded, Infeasible, MapfProblem, cbs
from safenav.mapf.cbs import CBS_BUDGET, RHO_CONFLICT
from safenav.roadmap import EdgeMode, IsolatedEndpoint, Roadmap, attach_endpoints

log = logging.getLogger(__name__)

DEFAULT_TRIALS = 50
SAMPLE_BUDGET = 200_000
NA = "N/A"

RESULT_COLUMNS = ["method", "difficulty", "n_agents", "trial", "agent_id", "success", "steps",
                  "cum_cost", "planned"]
SUMMARY_COLUMNS = ["method", "difficulty", "n_agents", "mean_cost", "std_cost", "success_rate",
                   "trials"]


class SamplingExhausted(RuntimeError):
    pass


class DigestMismatch(ValueError):
    pass


class MethodId(enum.Enum):
    UNCONSTRAINED_POLICY = "unconstrained_policy"
    UNCONSTRAINED_SEARCH = "unconstrained_search"
    CONSTRAINED_POLICY = "constrained_policy"
    CONSTRAINED_SEARCH = "constrained_search"

    @property
    def label(self) -> str:
        return {
            "unconstrained_policy": "Unconstrained Policy",
            "unconstrained_search": "Unconstrained Search (SoRB)",
            "constrained_policy": "Constrained Policy",
            "constrained_search": "Constrained Search (Ours)",
        }[self.value]

    @property
    def is_search(self) -> bool:
        return self in (MethodId.UNCONSTRAINED_SEARCH, MethodId.CONSTRAINED_SEARCH)

    @property
    def constrained(self) -> bool:
        return self in (MethodId.CONSTRAINED_POLICY, MethodId.CONSTRAINED_SEARCH)

    @classmethod
    def parse(cls, s: str) -> list["MethodId"]:
        s = s.lower()
        if s == "all":
            return list(cls)
        aliases = {"ours": cls.CONSTRAINED_SEARCH, "sorb": cls.UNCONSTRAINED_SEARCH}
        return [aliases[s]] if s in aliases else [cls(s)]


@dataclass
class ProblemSet:
    """``trials[k]`` lists ``(start, goal)`` for every agent of trial ``k``."""

    map_name: str
    difficulty: oracle.Difficulty
    n_agents: int
    trials: list[list[tuple[np.ndarray, np.ndarray]]]
    seed: int | None = None

    def to_json(self) -> dict:
        return {"map": self.map_name, "difficulty": self.difficulty.value, "n_agents": self.n_agents,
                "seed": self.seed,
                "trials": [[{"id": i, "start": s.tolist(), "goal": g.tolist()}
                            for i, (s, g) in enumerate(tr)] for tr in self.trials]}

    @classmethod
    def from_json(cls, doc: dict) -> "ProblemSet":
        trials = [[(np.array(a["start"], float), np.array(a["goal"], float)) for a in tr]
                  for tr in doc["trials"]]
        return cls(doc.get("map", "custom"), oracle.Difficulty.parse(doc["difficulty"]),
                   int(doc["n_agents"]), trials, doc.get("seed"))


def generate_problems(m: envsim.Map, difficulty, n_agents: int, trials: int,
                      rng: np.random.Generator, rho_agent: float = executor.RHO_AGENT,
                      budget: int = SAMPLE_BUDGET, seed: int | None = None) -> ProblemSet:
    """Rejection-sample start/goal pairs whose oracle distance falls in the band.

    Within a trial, starts are pairwise at least ``rho_agent`` apart, and so are goals.
    """
    if trials < 1 or n_agents < 1:
        raise ValueError("trials and n_agents must be positive")
    diff = oracle.Difficulty.parse(difficulty)
    lo, hi = oracle.BANDS[diff]
    gf = oracle.grid_field(m)
    draws = 0
    out = []
    for _ in range(trials):
        pairs: list[tuple[np.ndarray, np.ndarray]] = []
        while len(pairs) < n_agents:
            s = envsim.sample_free_state(m, rng)
            draws += 1
            if any(_far(s, p[0], rho_agent) is False for p in pairs):
                continue
            field_s = gf.distance_field(s)
            for _ in range(50):
                draws += 1
                if draws > budget:
                    raise SamplingExhausted(f"no valid {diff.value} problem within {budget} draws")
                g = envsim.sample_free_state(m, rng)
                d = gf.lookup(field_s, g)
                if lo <= d < hi and all(_far(g, p[1], rho_agent) for p in pairs):
                    pairs.append((s, g))
                    break
            if draws > budget:
                raise SamplingExhausted(f"no valid {diff.value} problem within {budget} draws")
        out.append(pairs)
    return ProblemSet(m.name, diff, n_agents, out, seed)


def problem_rng(seed: int, difficulty, n_agents: int) -> np.random.Generator:
    """Independent stream per (seed, difficulty, agent count)."""
    diff = oracle.Difficulty.parse(difficulty)
    return np.random.default_rng(np.random.SeedSequence(
        [seed, 13, list(oracle.Difficulty).index(diff), n_agents]))


def _far(p, q, rho: float) -> bool:
    return math.hypot(p[0] - q[0], p[1] - q[1]) >= rho


@dataclass
class BenchConfig:
    alpha: float = 1.0
    rho_conflict: float = RHO_CONFLICT
    rho_agent: float = executor.RHO_AGENT
    eps_wp: float = executor.EPS_WP
    cbs_budget: int = CBS_BUDGET


@dataclass
class TrialResult:
    trial: int
    metrics: executor.RunMetrics
    planned: bool = True
    trajectories: list = field(default_factory=list)

    @property
    def cost(self) -> float:
        """Per-trial statistic: mean cumulative cost over the trial's agents."""
        return self.metrics.mean_cost


@dataclass
class MethodResult:
    method: MethodId
    difficulty: oracle.Difficulty
    n_agents: int
    trials: list[TrialResult] | None  # None marks a method that does not apply (N/A)

    @property
    def applicable(self) -> bool:
        return self.trials is not None

    @property
    def trial_costs(self) -> np.ndarray:
        return np.array([t.cost for t in self.trials or []])

    @property
    def success_rate(self) -> float:
        flags = [a.success for t in self.trials or [] for a in t.metrics.agents]
        return float(np.mean(flags)) if flags else math.nan


def mode_for(method: MethodId, alpha: float) -> EdgeMode:
    return EdgeMode.blend(alpha) if method.constrained else EdgeMode.distance()


def solve_trial(rm: Roadmap, ckpt: Checkpoint, pairs, mode: EdgeMode, cfg: BenchConfig):
    """Attach endpoints and run CBS; returns per-agent waypoint arrays or ``None`` on failure."""
    pts = [p for s, g in pairs for p in (s, g)]
    roles = ["start", "goal"] * len(pairs)
    try:
        grm, idx = attach_endpoints(rm, ckpt.unconstrained, pts, roles)
        tasks = [AgentTask(i, idx[2 * i], idx[2 * i + 1]) for i in range(len(pairs))]
        plan = cbs(grm, MapfProblem(tasks, mode, cfg.rho_conflict), budget=cfg.cbs_budget)
    except (IsolatedEndpoint, Infeasible, BudgetExceeded) as exc:
        log.info("planning failed: %s", exc)
        return None
    return {i: grm.nodes[plan.paths[i].nodes] for i in range(len(pairs))}


def _run_trial(args) -> TrialResult:
    method, k, pairs, ckpt, rm, cfg, keep_traj = args
    m = ckpt.map
    agent = ckpt.safe_agent if method.constrained else ckpt.unconstrained
    if not method.is_search:
        trajs, metrics = executor.run_policy_only(m, agent, pairs)
        return TrialResult(k, metrics, False, trajs if keep_traj else [])
    waypoints = solve_trial(rm, ckpt, pairs, mode_for(method, cfg.alpha), cfg)
    planned = waypoints is not None
    if not planned:
        # fall back to heading straight for the goal so the trial is still scored
        waypoints = {i: np.array([g]) for i, (_, g) in enumerate(pairs)}
    starts = {i: s for i, (s, _) in enumerate(pairs)}
    if len(pairs) == 1:
        tr, res = executor.follow_single(m, agent, starts[0], waypoints[0], eps_wp=cfg.eps_wp)
        trajs, metrics = [tr], executor.RunMetrics([res])
    else:
        trajs, metrics = executor.follow_multi(m, agent, starts, waypoints, cfg.rho_agent, cfg.eps_wp)
    return TrialResult(k, metrics, planned, trajs if keep_traj else [])


def run_method(method: MethodId, problems: ProblemSet, ckpt: Checkpoint, rm: Roadmap | None,
               cfg: BenchConfig | None = None, ckpt_digest: str | None = None,
               force: bool = False, workers: int = 1, keep_trajectories: bool = False) -> MethodResult:
    """Run one method on every trial; policy-only methods on multi-agent sets yield N/A."""
    cfg = cfg or BenchConfig()
    if not method.is_search and problems.n_agents > 1:
        return MethodResult(method, problems.difficulty, problems.n_agents, None)
    if method.is_search:
        if rm is None:
            raise ValueError("search methods need a roadmap")
        if ckpt_digest is not None and rm.digest != ckpt_digest:
            msg = "roadmap was built from a different checkpoint"
            if not force:
                raise DigestMismatch(msg)
            log.warning("%s; continuing because force is set", msg)
    jobs = [(method, k, pairs, ckpt, rm, cfg, keep_trajectories)
            for k, pairs in enumerate(problems.trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    results.sort(key=lambda r: r.trial)
    return MethodResult(method, problems.difficulty, problems.n_agents, results)


def sample_std(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def format_cell(res: MethodResult) -> str:
    if not res.applicable:
        return NA
    costs = res.trial_costs
    cell = f"{np.mean(costs):.2f} ± {sample_std(costs):.2f} ({100 * res.success_rate:.0f}%)"
    if len(costs) == 1:
        cell += " [n=1]"
    return cell


def summary_row(res: MethodResult) -> dict:
    base = {"method": res.method.value, "difficulty": res.difficulty.value, "n_agents": res.n_agents}
    if not res.applicable:
        return {**base, "mean_cost": NA, "std_cost": NA, "success_rate": NA, "trials": NA}
    costs = res.trial_costs
    return {**base, "mean_cost": repr(float(np.mean(costs))), "std_cost": repr(sample_std(costs)),
            "success_rate": repr(res.success_rate), "trials": len(costs)}


def emit_stats(results: list[MethodResult], summary_csv: str | Path | None = None,
               results_csv: str | Path | None = None) -> str:
    """Render the summary table and optionally write the CSV sidecars.

    Multi-agent trial cost is the mean over that trial's agents; the spread is
    the sample standard deviation over trials.
    """
    if not results:
        raise ValueError("no results to summarize")
    header = "per-trial cost = mean over agents; cells: mean ± sample std over trials (agent success %)"
    width = max(len(r.method.label) for r in results)
    lines = [header, f"{'method':<{width}}  difficulty  agents  cumulative cost (success rate)"]
    for r in results:
        lines.append(f"{r.method.label:<{width}}  {r.difficulty.value:<10}  {r.n_agents:>6}  {format_cell(r)}")
    if summary_csv is not None:
        with open(summary_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
            w.writeheader()
            for r in results:
                w.writerow(summary_row(r))
    if results_csv is not None:
        write_results(results_csv, results)
    return "\n".join(lines)


def write_results(path: str | Path, results: list[MethodResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            for t in r.trials or []:
                for a in t.metrics.agents:
                    w.writerow([r.method.value, r.difficulty.value, r.n_agents, t.trial, a.agent_id,
                                int(a.success), a.steps, repr(a.cum_cost), int(t.planned)])


def save_problems(ps: ProblemSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ps.to_json(), indent=1))


def load_problems(path: str | Path) -> ProblemSet:
    return ProblemSet.from_json(json.loads(Path(path).read_text()))
