import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_with
from safenav import envsim
from safenav.tinynn import DenseNet
from safenav.gcrl import (CONSTRAINED, Agent, Batch, Checkpoint, CheckpointError, ReplayBuffer,
                          TrainConfig, Transition, actor_update, finetune, lagrange_update,
                          self_sample_batch, train)
from safenav.gcrl.agent import (actor_objective, cost_targets, distance_targets, select_nearest)
from safenav.gcrl.train import tau_at


def point_mass_target(critic, atom: int):
    """Make the target network output a (numerically) point mass on ``atom`` everywhere."""
    last = len(critic.target_net.weights) - 1
    critic.target_net.weights[last][...] = 0.0
    critic.target_net.biases[last][...] = -1e3
    critic.target_net.biases[last][atom] = 1e3


def batch_of(n, done, c=None):
    rng = np.random.default_rng(0)
    s = rng.uniform(0, 15, size=(n, 2))
    return Batch(s, rng.uniform(-1, 1, size=(n, 2)), np.zeros(n) if c is None else np.asarray(c, float),
                 s + 0.5, s + 3.0, np.asarray(done, bool))


@pytest.fixture
def agent(world, tiny_cfg):
    return Agent.init(tiny_cfg, world, np.random.default_rng(0))


@pytest.mark.parametrize("k", [0, 3, 10, 19])
def test_distance_backup_shifts_by_one(agent, k):
    point_mass_target(agent.dist, k)
    t = distance_targets(agent, batch_of(4, [False, True, False, True]))
    want = min(k + 1, 19)
    assert np.allclose(t[[0, 2], want], 1.0)
    assert np.allclose(t[[1, 3], 0], 1.0)
    assert np.allclose(t.sum(axis=1), 1.0)


def test_distance_dp_along_a_chain(agent):
    # applying the backup k times to an arrival transition gives k + 1 steps
    grid = agent.dist.grid
    dist = np.zeros(20)
    dist[0] = 1.0
    for k in range(1, 25):
        idx = int(np.argmax(dist))
        point_mass_target(agent.dist, idx)
        dist = distance_targets(agent, batch_of(1, [False]))[0]
        assert grid.atoms[int(np.argmax(dist))] == min(k + 1, 20)


def test_cost_backup(agent):
    point_mass_target(agent.cost, 5)
    grid = agent.cost.grid
    c = np.array([0.0, 1.5, 2.0, 0.7])
    t = cost_targets(agent, batch_of(4, [False, False, True, True], c))
    means = t @ grid.atoms
    assert means[0] == pytest.approx(grid.atoms[5])
    assert means[1] == pytest.approx(grid.atoms[5] + 1.5)
    assert means[2] == pytest.approx(2.0)
    assert means[3] == pytest.approx(0.7)


def test_actor_step_follows_objective_gradient(world, tiny_cfg):
    rng = np.random.default_rng(5)
    agent = Agent.init(tiny_with(hidden=6), world, rng)
    agent.phase = CONSTRAINED
    agent.lagrange = 0.7
    # full-scale output layers so every coordinate carries a measurable gradient
    for net in (agent.actor, agent.dist.net, agent.cost.net):
        net.flat[:] = DenseNet.init(net.sizes, rng, head=net.head).flat
    b = batch_of(8, [False] * 8)
    flat0 = agent.actor.flat.copy()
    h = 1e-6
    fd = np.empty_like(flat0)
    for k in range(flat0.size):
        agent.actor.flat[k] = flat0[k] + h
        fp = actor_objective(agent, b)
        agent.actor.flat[k] = flat0[k] - h
        fm = actor_objective(agent, b)
        agent.actor.flat[k] = flat0[k]
        fd[k] = (fp - fm) / (2 * h)
    actor_update(agent, b)
    # the first Adam step moves every coordinate by about -lr * sign(gradient)
    step = agent.actor.flat - flat0
    big = np.abs(fd) > 1e-6
    assert big.sum() > flat0.size // 2
    assert np.all(np.sign(step[big]) == -np.sign(fd[big]))


@given(st.floats(0, 100), st.floats(0, 50), st.floats(0, 50), st.floats(1e-4, 1.0))
def test_lagrange_update_properties(lam, j, delta, eta):
    new = lagrange_update(lam, j, delta, eta)
    assert new >= 0.0
    if j > delta + 1e-3:
        assert new > lam
    if j < delta:
        assert new <= lam
    assert new == pytest.approx(max(0.0, lam + eta * (j - delta)))


def test_lagrange_update_errors():
    with pytest.raises(ValueError):
        lagrange_update(-1.0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        lagrange_update(1.0, 1.0, 1.0, 0.0)


def test_select_nearest_stable():
    assert list(select_nearest(np.array([5.0, 1.0, 3.0, 7.0, 3.0]), 4.0, 3)) == [0, 2, 4]
    with pytest.raises(ValueError):
        select_nearest(np.zeros(2), 1.0, 3)


def test_self_sampling_picks_closest(agent, world):
    rng_a, rng_b = np.random.default_rng(9), np.random.default_rng(9)
    pairs = self_sample_batch(agent, world, 6.0, "distance", 40, 10, rng_a)
    s = envsim.sample_free_states(world, rng_b, 40)
    g = envsim.sample_free_states(world, rng_b, 40)
    v = agent.predict(s, g)
    order = np.argsort(np.abs(v - 6.0), kind="stable")[:10]
    assert all(np.array_equal(p[0], s[i]) and np.array_equal(p[1], g[i]) for p, i in zip(pairs, order))
    with pytest.raises(ValueError):
        self_sample_batch(agent, world, 6.0, "distance", 4, 10, rng_a)
    with pytest.raises(ValueError):
        self_sample_batch(agent, world, 6.0, "speed", 40, 10, rng_a)


def test_tau_schedule_thirds():
    cfg = TrainConfig()
    assert [tau_at(cfg, it, 90) for it in (0, 29, 30, 59, 60, 89)] == [3, 3, 9, 9, 15, 15]


def make_episode(start, n, goal):
    out = []
    p = np.array(start, float)
    for k in range(n):
        q = p + np.array([0.5, 0.0])
        out.append(Transition(p.copy(), np.array([0.5, 0.0]), -1.0, 0.0, q, np.array(goal, float),
                              k == n - 1))
        p = q
    return out


def test_relabeled_goals_come_from_same_episode_future():
    buf = ReplayBuffer(30)
    for e in range(8):
        buf.add_episode(make_episode((e * 5.0, e * 1.0), 5, (50.0, 50.0)))
    b = buf.sample(400, np.random.default_rng(0), relabel_prob=1.0, goal_tol=1.0)
    for s, s2, g, d in zip(b.s, b.s2, b.goal, b.done):
        # same episode: same y coordinate, goal at or after the next state
        assert g[1] == s[1]
        assert g[0] >= s2[0] - 1e-12
        assert d == (np.linalg.norm(s2 - g) <= 1.0)


def test_relabel_probability_zero_keeps_goals():
    buf = ReplayBuffer(10)
    buf.add_episode(make_episode((0.0, 0.0), 4, (9.0, 9.0)))
    b = buf.sample(20, np.random.default_rng(0))
    assert np.all(b.goal == 9.0)


def test_buffer_fifo_and_roundtrip():
    buf = ReplayBuffer(7)
    for e in range(3):
        buf.add_episode(make_episode((0.0, float(e)), 4, (9.0, 9.0)))
    assert len(buf) == 7
    st_ = buf.states()
    assert st_[0][1] == 1.0 and st_[-1][1] == 2.0
    clone = ReplayBuffer.from_arrays(7, buf.to_arrays())
    assert np.array_equal(clone.states(), st_)
    for k in range(7):
        a, b = buf.transition(k), clone.transition(k)
        assert np.array_equal(a.s, b.s) and np.array_equal(a.goal, b.goal) and a.done == b.done
    # the compacted copy still relabels within episodes
    r = clone.sample(200, np.random.default_rng(3), 1.0)
    assert np.all(r.goal[:, 1] == r.s[:, 1])
    with pytest.raises(ValueError):
        ReplayBuffer(0)
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(1, np.random.default_rng(0))


def test_config_validation():
    for bad in (dict(actor_lr=0.0), dict(polyak=1.5), dict(sample_k=500), dict(iterations=-1),
                dict(cost_estimate="both"), dict(cost_limit=-1.0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_training_is_deterministic(tiny_run, world, tiny_cfg, tmp_path):
    ck1, log1, _, _ = tiny_run
    again, log2 = train(tiny_cfg, world)
    log1.write_metrics(tmp_path / "a.csv")
    log2.write_metrics(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert again.to_bytes() == ck1.to_bytes()
    other, _ = train(dataclasses.replace(tiny_cfg, seed=8), world)
    assert other.to_bytes() != ck1.to_bytes()


def test_finetune_keeps_first_phase(tiny_run):
    ck1, _, ck2, log2 = tiny_run
    assert ck2.unconstrained.actor == ck1.unconstrained.actor
    assert ck2.constrained is not None and ck2.constrained.phase == CONSTRAINED
    assert ck2.safe_agent is ck2.constrained
    assert ck2.iterations == (ck1.config.iterations, ck1.config.finetune_iterations)
    lams = [row[2] for row in log2.lagrange]
    assert len(lams) > 0 and min(lams) >= 0.0


def test_multiplier_rises_when_cost_exceeds_limit(tiny_run):
    ck1 = tiny_run[0]
    cfg = dataclasses.replace(ck1.config, cost_limit=0.0, finetune_iterations=60, eval_episodes=0)
    _, log = finetune(ck1, cfg)
    rows = log.lagrange
    assert len(rows) > 10
    prev = 0.0
    for _, j, lam in rows:
        assert j > 0.0
        assert lam > prev
        assert lam == pytest.approx(prev + cfg.lagrange_lr * j)
        prev = lam


def test_tasks_estimate_runs(tiny_run):
    ck1 = tiny_run[0]
    cfg = dataclasses.replace(ck1.config, cost_estimate="tasks", finetune_iterations=40, eval_episodes=0)
    _, log = finetune(ck1, cfg)
    assert all(lam >= 0 for _, _, lam in log.lagrange)


def test_zero_iterations_gives_untrained_checkpoint(world, tiny_cfg):
    ck, log = train(dataclasses.replace(tiny_cfg, iterations=0), world)
    assert not ck.trained and log.metrics == []
    assert len(ck.buffer) >= tiny_cfg.initial_collect


def test_checkpoint_roundtrip(tiny_ckpt, tmp_path):
    path = tmp_path / "c.snav"
    digest = tiny_ckpt.save(path)
    back = Checkpoint.load(path)
    assert back.to_bytes() == tiny_ckpt.to_bytes()
    assert back.digest == digest
    s = np.array([[5.0, 5.0], [50.0, 10.0]])
    g = np.array([[9.0, 5.0], [50.0, 50.0]])
    assert np.array_equal(back.safe_agent.predict(s, g), tiny_ckpt.safe_agent.predict(s, g))
    assert np.array_equal(back.buffer.states(), tiny_ckpt.buffer.states())


@pytest.mark.parametrize("mangle", [lambda b: b"XXXX" + b[4:], lambda b: b[:40], lambda b: b[:-100],
                                    lambda b: b[:12] + b"}" + b[13:]])
def test_corrupt_checkpoint_rejected(tiny_ckpt, mangle):
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(mangle(tiny_ckpt.to_bytes()))
    with pytest.raises(CheckpointError):
        Checkpoint.load("/nonexistent/ck.snav")
