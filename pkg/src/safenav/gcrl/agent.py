"""Goal-conditioned actor with categorical distance and cost critics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from safenav import envsim
from safenav.gcrl.buffer import Batch, ReplayBuffer, Transition
from safenav.gcrl.categorical import (AtomGrid, cost_grid, distance_grid, mean_of,
                                      project_batch, softmax)
from safenav.tinynn import DenseNet, OptimState, forward, forward_backward, optim_step

UNCONSTRAINED = "unconstrained"
CONSTRAINED = "constrained"


@dataclass
class TrainConfig:
    actor_lr: float = 1e-5
    critic_lr: float = 1e-4
    cost_critic_lr: float = 1e-4
    actor_update_interval: int = 1
    target_update_interval: int = 5
    polyak: float = 0.05
    initial_lagrange: float = 0.0
    lagrange_lr: float = 0.035
    cost_limit: float = 10.0
    batch_size: int = 64
    buffer_size: int = 100_000
    initial_collect: int = 1000
    iterations: int = 100_000
    finetune_iterations: int = 20_000
    hidden: int = 256
    distance_bins: int = 20
    cost_bins: int = 40
    cost_max: float = 40.0
    max_episode_steps: int = envsim.MAX_EPISODE_STEPS
    goal_tol: float = envsim.GOAL_TOL
    noise_start: float = 0.3
    noise_end: float = 0.05
    relabel: bool = True
    relabel_prob: float = 0.5
    sample_population: int = 256
    sample_k: int = 64
    tau_start: float = 3.0
    tau_end: float = 15.0
    cost_sample_every: int = 2
    # what the multiplier update averages: "tasks" (current self-sampled start-goal
    # pairs) or "updates" (states and relabeled goals of the update batch)
    cost_estimate: str = "updates"
    log_interval: int = 1000
    eval_interval: int = 5000
    eval_episodes: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("actor_lr", "critic_lr", "cost_critic_lr", "lagrange_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cost_limit < 0:
            raise ValueError("cost_limit must be nonnegative")
        if not 0.0 <= self.polyak <= 1.0:
            raise ValueError("polyak must lie in [0, 1]")
        if self.sample_k > self.sample_population:
            raise ValueError("sample_k cannot exceed sample_population")
        if self.cost_estimate not in ("tasks", "updates"):
            raise ValueError("cost_estimate must be 'tasks' or 'updates'")
        if self.iterations < 0 or self.finetune_iterations < 0:
            raise ValueError("iteration budgets must be nonnegative")


@dataclass
class CategoricalCritic:
    net: DenseNet
    target_net: DenseNet
    grid: AtomGrid
    opt: OptimState

    @classmethod
    def init(cls, grid: AtomGrid, hidden: int, lr: float, rng) -> "CategoricalCritic":
        net = DenseNet.init([6, hidden, hidden, grid.n_atoms], rng, final_scale=1e-2)
        return cls(net, net.copy(), grid, OptimState.for_params(net.params, lr))

    def copy(self) -> "CategoricalCritic":
        return CategoricalCritic(self.net.copy(), self.target_net.copy(), self.grid, self.opt.copy())


@dataclass
class Encoder:
    """Maps world coordinates to network features.

    Positions are centered on the map and scaled to [-1, 1]; the goal enters as
    its offset from the current position, scaled by ``offset_scale``.
    """

    center: np.ndarray
    half_extent: float
    offset_scale: float = 10.0

    @classmethod
    def for_map(cls, m: envsim.Map) -> "Encoder":
        return cls(np.array([m.width / 2, m.height / 2]), max(m.width, m.height) / 2)

    def actor_in(self, s, g) -> np.ndarray:
        s = np.atleast_2d(s)
        g = np.atleast_2d(g)
        return np.hstack([(s - self.center) / self.half_extent, (g - s) / self.offset_scale])

    def critic_in(self, s, a, g) -> np.ndarray:
        s = np.atleast_2d(s)
        g = np.atleast_2d(g)
        return np.hstack([(s - self.center) / self.half_extent, np.atleast_2d(a),
                          (g - s) / self.offset_scale])


@dataclass
class Agent:
    actor: DenseNet
    actor_target: DenseNet
    actor_opt: OptimState
    dist: CategoricalCritic
    cost: CategoricalCritic
    encoder: Encoder
    lagrange: float = 0.0
    phase: str = UNCONSTRAINED
    updates: int = 0

    @classmethod
    def init(cls, cfg: TrainConfig, m: envsim.Map, rng: np.random.Generator) -> "Agent":
        actor = DenseNet.init([4, cfg.hidden, cfg.hidden, 2], rng, head="tanh", final_scale=1e-2)
        dist = CategoricalCritic.init(distance_grid(cfg.distance_bins), cfg.hidden, cfg.critic_lr, rng)
        cost = CategoricalCritic.init(cost_grid(cfg.cost_max, cfg.cost_bins), cfg.hidden,
                                      cfg.cost_critic_lr, rng)
        return cls(actor, actor.copy(), OptimState.for_params(actor.params, cfg.actor_lr),
                   dist, cost, Encoder.for_map(m), lagrange=max(cfg.initial_lagrange, 0.0))

    def copy(self) -> "Agent":
        return Agent(self.actor.copy(), self.actor_target.copy(), self.actor_opt.copy(),
                     self.dist.copy(), self.cost.copy(), self.encoder, self.lagrange,
                     self.phase, self.updates)

    def policy(self, s, g) -> np.ndarray:
        """Deterministic actions for a batch of states and goals."""
        return forward(self.actor, self.encoder.actor_in(s, g))

    def predict(self, s, g, critic: CategoricalCritic | None = None,
                chunk: int = 8192) -> np.ndarray:
        """Expected critic value at ``(s, pi(s, g), g)`` for row-aligned batches."""
        critic = critic or self.dist
        s = np.atleast_2d(np.asarray(s, dtype=float))
        g = np.atleast_2d(np.asarray(g, dtype=float))
        out = np.empty(len(s))
        for lo in range(0, len(s), chunk):
            ss, gg = s[lo:lo + chunk], g[lo:lo + chunk]
            a = self.policy(ss, gg)
            out[lo:lo + chunk] = expected_value(critic, ss, a, gg, self.encoder)
        return out

    def predict_both(self, s, g, chunk: int = 8192) -> tuple[np.ndarray, np.ndarray]:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        g = np.atleast_2d(np.asarray(g, dtype=float))
        d = np.empty(len(s))
        c = np.empty(len(s))
        for lo in range(0, len(s), chunk):
            ss, gg = s[lo:lo + chunk], g[lo:lo + chunk]
            a = self.policy(ss, gg)
            d[lo:lo + chunk] = expected_value(self.dist, ss, a, gg, self.encoder)
            c[lo:lo + chunk] = expected_value(self.cost, ss, a, gg, self.encoder)
        return d, c


def act(agent: Agent, s, s_g, noise_scale: float = 0.0,
        rng: np.random.Generator | None = None) -> np.ndarray:
    a = agent.policy(s, s_g)[0]
    if noise_scale > 0.0:
        if rng is None:
            raise ValueError("exploration noise needs a random generator")
        a = a + rng.normal(0.0, noise_scale, size=2)
    return np.clip(a, -1.0, 1.0)


def expected_value(critic: CategoricalCritic, s, a, s_g, encoder: Encoder) -> np.ndarray | float:
    """Mean of the critic's categorical distribution at ``(s, a, s_g)``."""
    x = encoder.critic_in(s, a, s_g)
    v = mean_of(softmax(forward(critic.net, x)), critic.grid)
    return float(v[0]) if np.ndim(s) == 1 else v


def _cross_entropy_step(critic: CategoricalCritic, x: np.ndarray, target: np.ndarray) -> float:
    n = x.shape[0]

    def upstream(logits):
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -float(np.sum(target * logp)) / n
        return loss, (np.exp(logp) - target) / n

    loss, _, grads = forward_backward(critic.net, x, upstream)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite critic loss")
    optim_step(critic.net.params, grads.params, critic.opt)
    return loss


def _next_actions(agent: Agent, batch: Batch) -> np.ndarray:
    return forward(agent.actor_target, agent.encoder.actor_in(batch.s2, batch.goal))


def distance_targets(agent: Agent, batch: Batch, a2: np.ndarray | None = None) -> np.ndarray:
    """Target distributions over step counts: one more step than the next state."""
    grid = agent.dist.grid
    if a2 is None:
        a2 = _next_actions(agent, batch)
    p2 = softmax(forward(agent.dist.target_net, agent.encoder.critic_in(batch.s2, a2, batch.goal)))
    values = 1.0 + np.broadcast_to(grid.atoms, p2.shape)
    target = project_batch(grid, values, p2)
    target[batch.done] = 0.0
    target[batch.done, 0] = 1.0
    return target


def cost_targets(agent: Agent, batch: Batch, a2: np.ndarray | None = None) -> np.ndarray:
    grid = agent.cost.grid
    if a2 is None:
        a2 = _next_actions(agent, batch)
    p2 = softmax(forward(agent.cost.target_net, agent.encoder.critic_in(batch.s2, a2, batch.goal)))
    values = batch.c[:, None] + np.broadcast_to(grid.atoms, p2.shape)
    terminal = batch.done
    if terminal.any():
        # a terminal transition carries only the arrival cost
        values = values.copy()
        values[terminal] = batch.c[terminal, None]
        p2 = p2.copy()
        p2[terminal] = 0.0
        p2[terminal, 0] = 1.0
    return project_batch(grid, values, p2)


def critic_backup_distance(agent: Agent, batch: Batch, a2: np.ndarray | None = None) -> float:
    if len(batch) == 0:
        raise ValueError("empty batch")
    target = distance_targets(agent, batch, a2)
    return _cross_entropy_step(agent.dist, agent.encoder.critic_in(batch.s, batch.a, batch.goal), target)


def critic_backup_cost(agent: Agent, batch: Batch, a2: np.ndarray | None = None) -> float:
    if len(batch) == 0:
        raise ValueError("empty batch")
    target = cost_targets(agent, batch, a2)
    return _cross_entropy_step(agent.cost, agent.encoder.critic_in(batch.s, batch.a, batch.goal), target)


def _critic_action_grad(critic: CategoricalCritic, x: np.ndarray, weight: float):
    """Batch values of E[z] and d(weight * sum E[z])/da through ``critic``."""
    atoms = critic.grid.atoms

    def upstream(logits):
        p = softmax(logits)
        ev = p @ atoms
        return ev, weight * p * (atoms[None, :] - ev[:, None])

    ev, _, grads = forward_backward(critic.net, x, upstream, need_params=False)
    return ev, grads.input[:, 2:4]


def actor_objective(agent: Agent, batch: Batch, lagrange: float | None = None) -> float:
    """Batch mean of E[distance] (+ lambda * E[cost] in the constrained phase)."""
    lam = agent.lagrange if lagrange is None else lagrange
    a = agent.policy(batch.s, batch.goal)
    x = agent.encoder.critic_in(batch.s, a, batch.goal)
    obj = float(np.mean(expected_value(agent.dist, batch.s, a, batch.goal, agent.encoder)))
    if agent.phase == CONSTRAINED and lam != 0.0:
        obj += lam * float(np.mean(mean_of(softmax(forward(agent.cost.net, x)), agent.cost.grid)))
    return obj


def actor_update(agent: Agent, batch: Batch) -> tuple[float, float]:
    """One gradient step on the actor; returns ``(objective, mean expected cost)``.

    The expected cost is only evaluated in the constrained phase (nan otherwise).
    Critics are held fixed: their input gradient w.r.t. the action is pushed
    back through the actor only.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    n = len(batch)
    enc = agent.encoder
    xa = enc.actor_in(batch.s, batch.goal)
    lam = agent.lagrange if agent.phase == CONSTRAINED else 0.0
    state = {}

    def upstream(a):
        x = enc.critic_in(batch.s, a, batch.goal)
        ed, gd = _critic_action_grad(agent.dist, x, 1.0 / n)
        if agent.phase != CONSTRAINED:
            state["j_cost"] = float("nan")
            return float(ed.mean()), gd
        ec, gc = _critic_action_grad(agent.cost, x, lam / n)
        state["j_cost"] = float(ec.mean())
        return float(ed.mean()) + lam * state["j_cost"], gd + gc

    obj, _, grads = forward_backward(agent.actor, xa, upstream)
    if not np.isfinite(obj):
        raise FloatingPointError("non-finite actor objective")
    optim_step(agent.actor.params, grads.params, agent.actor_opt)
    return obj, state["j_cost"]


def lagrange_update(lam: float, j_hat: float, delta: float, eta: float) -> float:
    """Projected gradient ascent on the multiplier: ``max(0, lam + eta (J - delta))``."""
    if lam < 0:
        raise ValueError("multiplier must be nonnegative")
    if eta <= 0:
        raise ValueError("multiplier learning rate must be positive")
    return max(0.0, lam + eta * (j_hat - delta))


def select_nearest(values: np.ndarray, tau: float, k: int) -> np.ndarray:
    """Indices of the ``k`` values closest to ``tau``, ties kept in sampling order."""
    values = np.asarray(values, dtype=float)
    if k > len(values):
        raise ValueError(f"cannot select {k} of {len(values)} candidates")
    return np.argsort(np.abs(values - tau), kind="stable")[:k]


def self_sample_batch(agent: Agent, m: envsim.Map, tau: float, which: str, n: int, k: int,
                      rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pick ``k`` of ``n`` random start-goal pairs whose predicted value is nearest ``tau``."""
    if k > n:
        raise ValueError(f"K={k} exceeds population N={n}")
    if which not in ("distance", "cost"):
        raise ValueError(f"unknown sample target {which!r}")
    starts = envsim.sample_free_states(m, rng, n)
    goals = envsim.sample_free_states(m, rng, n)
    critic = agent.dist if which == "distance" else agent.cost
    v = agent.predict(starts, goals, critic)
    return [(starts[i], goals[i]) for i in select_nearest(v, tau, k)]


@dataclass
class Episode:
    transitions: list[Transition] = field(default_factory=list)
    ret: float = 0.0
    cost: float = 0.0
    reached: bool = False

    def __len__(self):
        return len(self.transitions)


def run_episode(agent: Agent | None, env: envsim.NavEnv, start, goal, noise_scale: float,
                rng: np.random.Generator) -> Episode:
    """Roll one episode; ``agent=None`` takes uniform random actions."""
    st = env.reset(start, goal)
    ep = Episode()
    while True:
        if agent is None:
            a = rng.uniform(-1.0, 1.0, size=2)
        else:
            a = act(agent, st.position, st.goal, noise_scale, rng)
        res = env.step(a)
        ep.transitions.append(Transition(st.position.copy(), a, res.reward, res.cost,
                                         res.next_state.position.copy(), st.goal.copy(), res.reached))
        ep.ret += res.reward
        ep.cost += res.cost
        st = res.next_state
        if res.done:
            ep.reached = res.reached
            return ep


def collect_episode(agent: Agent | None, env: envsim.NavEnv, start, goal, buffer: ReplayBuffer,
                    noise_scale: float, rng: np.random.Generator) -> tuple[float, float]:
    """Roll one episode into ``buffer``; returns ``(summed reward, summed cost)``."""
    ep = run_episode(agent, env, start, goal, noise_scale, rng)
    buffer.add_episode(ep.transitions)
    return ep.ret, ep.cost
