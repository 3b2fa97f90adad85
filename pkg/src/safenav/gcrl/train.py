"""Two-phase training loop: unconstrained actor-critic, then Lagrangian fine-tuning."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from safenav import envsim, oracle
from safenav.gcrl.agent import (CONSTRAINED, Agent, TrainConfig, _next_actions, actor_update,
                                collect_episode, critic_backup_cost, critic_backup_distance,
                                lagrange_update, run_episode, self_sample_batch)
from safenav.gcrl.buffer import ReplayBuffer
from safenav.gcrl.checkpoint import Checkpoint
from safenav.tinynn import polyak_update

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["iter", "actor_loss", "dist_loss", "cost_loss", "lambda", "eval_success", "eval_cost"]


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainLog:
    metrics: list[dict] = field(default_factory=list)
    # one row per multiplier update: (iteration, batch expected cost, lambda after update)
    lagrange: list[tuple[int, float, float]] = field(default_factory=list)

    def write_metrics(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
            w.writeheader()
            for row in self.metrics:
                w.writerow({k: _fmt(row.get(k)) for k in METRIC_COLUMNS})

    def write_lagrange(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "j_hat", "lambda"])
            for it, j, lam in self.lagrange:
                w.writerow([it, repr(j), repr(lam)])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def noise_at(cfg: TrainConfig, it: int, total: int) -> float:
    frac = it / max(total, 1)
    return cfg.noise_start + (cfg.noise_end - cfg.noise_start) * min(frac, 1.0)


def tau_at(cfg: TrainConfig, it: int, total: int) -> float:
    """Distance target for self-sampling: low, middle, high over successive thirds."""
    third = min(int(3 * it / max(total, 1)), 2)
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * third / 2


def eval_problems(m: envsim.Map, seed: int, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Fixed easy-band start/goal pairs used for periodic evaluation."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    gf = oracle.grid_field(m)
    out = []
    while len(out) < n:
        s = envsim.sample_free_state(m, rng)
        g = envsim.sample_free_state(m, rng)
        d = gf.lookup(gf.distance_field(s), g)
        lo, hi = oracle.BANDS[oracle.Difficulty.EASY]
        if lo <= d < hi:
            out.append((s, g))
    return out


def evaluate(agent: Agent, env: envsim.NavEnv, problems) -> tuple[float, float]:
    """Noise-free success rate and mean episode cost over ``problems``."""
    rng = np.random.default_rng(0)
    succ, costs = 0, []
    for s, g in problems:
        ep = run_episode(agent, env, s, g, 0.0, rng)
        succ += ep.reached
        costs.append(ep.cost)
    return succ / max(len(problems), 1), float(np.mean(costs)) if costs else 0.0


def _check_finite(agent: Agent) -> None:
    for net in (agent.actor, agent.dist.net, agent.cost.net):
        for p in net.params:
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged("non-finite network parameters; aborting training")


class _Loop:
    def __init__(self, cfg: TrainConfig, m: envsim.Map, agent: Agent, buffer: ReplayBuffer,
                 phase_id: int, callback: Callable[[dict], None] | None):
        self.cfg, self.map, self.agent, self.buffer = cfg, m, agent, buffer
        streams = np.random.SeedSequence([cfg.seed, phase_id]).spawn(4)
        self.env_rng, self.noise_rng, self.batch_rng, self.sample_rng = (
            np.random.default_rng(s) for s in streams)
        self.env = envsim.NavEnv(m, cfg.goal_tol, cfg.max_episode_steps)
        self.eval_set = eval_problems(m, cfg.seed, cfg.eval_episodes) if cfg.eval_episodes else []
        self.callback = callback
        self.log = TrainLog()
        self.queue: list = []
        self.tasks: tuple[np.ndarray, np.ndarray] | None = None
        self.n_batches = 0

    def initial_collect(self) -> None:
        while len(self.buffer) < min(self.cfg.initial_collect, self.buffer.capacity):
            s = envsim.sample_free_state(self.map, self.env_rng)
            g = envsim.sample_free_state(self.map, self.env_rng)
            collect_episode(None, self.env, s, g, self.buffer, 0.0, self.noise_rng)

    def _next_pair(self, it: int, total: int):
        if not self.queue:
            cfg = self.cfg
            use_cost = (self.agent.phase == CONSTRAINED and cfg.cost_sample_every > 0
                        and self.n_batches % cfg.cost_sample_every == 1)
            if use_cost:
                which, tau = "cost", cfg.cost_limit
            else:
                which, tau = "distance", tau_at(cfg, it, total)
            self.queue = self_sample_batch(self.agent, self.map, tau, which, cfg.sample_population,
                                           cfg.sample_k, self.sample_rng)
            self.tasks = (np.array([p[0] for p in self.queue]), np.array([p[1] for p in self.queue]))
            self.queue.reverse()
            self.n_batches += 1
        return self.queue.pop()

    def update(self) -> tuple[float, float, float, float]:
        cfg, agent = self.cfg, self.agent
        batch = self.buffer.sample(cfg.batch_size, self.batch_rng,
                                   cfg.relabel_prob if cfg.relabel else 0.0, cfg.goal_tol)
        a2 = _next_actions(agent, batch)
        dl = critic_backup_distance(agent, batch, a2)
        cl = critic_backup_cost(agent, batch, a2)
        agent.updates += 1
        al, j_hat = float("nan"), float("nan")
        if agent.updates % cfg.actor_update_interval == 0:
            al, j_hat = actor_update(agent, batch)
            if agent.phase == CONSTRAINED:
                if cfg.cost_estimate == "tasks" and self.tasks is not None:
                    j_hat = float(np.mean(agent.predict(*self.tasks, critic=agent.cost)))
                agent.lagrange = lagrange_update(agent.lagrange, j_hat, cfg.cost_limit, cfg.lagrange_lr)
        if agent.updates % cfg.target_update_interval == 0:
            polyak_update(agent.actor_target, agent.actor, cfg.polyak)
            polyak_update(agent.dist.target_net, agent.dist.net, cfg.polyak)
            polyak_update(agent.cost.target_net, agent.cost.net, cfg.polyak)
        return al, dl, cl, j_hat

    def run(self, total: int) -> TrainLog:
        cfg = self.cfg
        it = 0
        acc = {"actor_loss": [], "dist_loss": [], "cost_loss": []}
        while it < total:
            start, goal = self._next_pair(it, total)
            _, _ = collect_episode(self.agent, self.env, start, goal, self.buffer,
                                   noise_at(cfg, it, total), self.noise_rng)
            steps = self.env.state.steps_elapsed
            for _ in range(steps):
                if it >= total:
                    break
                al, dl, cl, j_hat = self.update()
                it += 1
                if self.agent.phase == CONSTRAINED and np.isfinite(j_hat):
                    self.log.lagrange.append((it, j_hat, self.agent.lagrange))
                if np.isfinite(al):
                    acc["actor_loss"].append(al)
                acc["dist_loss"].append(dl)
                acc["cost_loss"].append(cl)
                if it % cfg.log_interval == 0 or it == total:
                    self._emit(it, acc)
                    acc = {k: [] for k in acc}
        return self.log

    def _emit(self, it: int, acc: dict) -> None:
        _check_finite(self.agent)
        row = {k: float(np.mean(v)) if v else None for k, v in acc.items()}
        row["iter"] = it
        row["lambda"] = float(self.agent.lagrange)
        if self.eval_set and (it % self.cfg.eval_interval == 0 or it == 0):
            row["eval_success"], row["eval_cost"] = evaluate(self.agent, self.env, self.eval_set)
        self.log.metrics.append(row)
        if self.callback:
            self.callback(row)


def train(cfg: TrainConfig, m: envsim.Map,
          callback: Callable[[dict], None] | None = None) -> tuple[Checkpoint, TrainLog]:
    """First phase: learn the goal-conditioned actor and both critics without the cost penalty."""
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    agent = Agent.init(cfg, m, init_rng)
    buffer = ReplayBuffer(cfg.buffer_size)
    loop = _Loop(cfg, m, agent, buffer, 1, callback)
    loop.initial_collect()
    tlog = loop.run(cfg.iterations)
    return Checkpoint(cfg, m, agent, None, buffer, (cfg.iterations, 0)), tlog


def finetune(ckpt: Checkpoint, cfg: TrainConfig | None = None,
             callback: Callable[[dict], None] | None = None) -> tuple[Checkpoint, TrainLog]:
    """Second phase: continue from the first-phase agent with the Lagrangian actor objective.

    The first-phase agent is kept untouched in the returned checkpoint.
    """
    cfg = cfg or ckpt.config
    agent = ckpt.unconstrained.copy()
    agent.phase = CONSTRAINED
    agent.lagrange = max(cfg.initial_lagrange, 0.0)
    buffer = ReplayBuffer.from_arrays(ckpt.buffer.capacity, ckpt.buffer.to_arrays())
    loop = _Loop(cfg, ckpt.map, agent, buffer, 2, callback)
    tlog = loop.run(cfg.finetune_iterations)
    return Checkpoint(cfg, ckpt.map, ckpt.unconstrained, agent, buffer,
                      (ckpt.iterations[0], cfg.finetune_iterations)), tlog
