import math

import numpy as np
import pytest

from safenav import envsim, executor
from safenav.executor import AgentResult, RunMetrics


class Straight:
    """Scripted policy: unit-box step straight at the goal."""

    def policy(self, s, g):
        s, g = np.atleast_2d(s), np.atleast_2d(g)
        return np.clip(g - s, -1.0, 1.0)


class Still:
    def policy(self, s, g):
        return np.zeros_like(np.atleast_2d(s))


OPEN = envsim.Map(30.0, 30.0)


def test_single_straight_line_cost(world):
    tr, res = executor.follow_single(world, Straight(), (45.0, 5.0), [(50.0, 5.0)])
    assert res.success and res.steps == 4  # reaches (49, 5), within tolerance
    want = sum(envsim.step_cost(world, (45.0 + k, 5.0)) for k in range(1, 5))
    assert res.cum_cost == pytest.approx(want)
    assert sum(tr.cost) == pytest.approx(res.cum_cost)
    assert tr.t == list(range(5)) and tr.done[-1]


def test_single_start_at_goal_is_free():
    tr, res = executor.follow_single(OPEN, Straight(), (3.0, 3.0), [(3.5, 3.0)])
    assert res.success and res.steps == 0 and res.cum_cost == 0.0 and len(tr) == 1


def test_single_switches_waypoints():
    wps = [(5.0, 0.5), (5.0, 6.0)]
    tr, res = executor.follow_single(OPEN, Straight(), (0.5, 0.5), wps)
    assert res.success
    idx = np.array(tr.waypoint_idx)
    first_switch = int(np.argmax(idx == 1))
    assert math.dist(tr.pos[first_switch], wps[0]) <= executor.EPS_WP
    assert np.all(np.diff(idx) >= 0)


def test_single_budget_failure():
    tr, res = executor.follow_single(OPEN, Still(), (1.0, 1.0), [(9.0, 9.0)], budget=7)
    assert not res.success and res.steps == 7 and len(tr) == 8
    with pytest.raises(ValueError):
        executor.follow_single(OPEN, Still(), (1.0, 1.0), [])


def test_multi_independent_agents_match_single():
    starts = {0: np.array([1.0, 1.0]), 1: np.array([20.0, 20.0])}
    plans = {0: np.array([[1.0, 1.0], [6.0, 1.0]]), 1: np.array([[20.0, 20.0], [20.0, 25.0]])}
    trajs, m = executor.follow_multi(OPEN, Straight(), starts, plans)
    assert m.success_rate == 1.0
    for tr, (aid, wps) in zip(trajs, plans.items()):
        _, single = executor.follow_single(OPEN, Straight(), starts[aid], wps, agent_id=aid)
        assert tr.agent_id == aid
        assert m.agents[aid].steps == single.steps


def test_multi_global_clock_holds_fast_agent():
    # agent 1's first waypoint is far, so agent 0 must hold at its step-1 waypoint
    starts = {0: np.array([1.0, 1.0]), 1: np.array([1.0, 20.0])}
    plans = {0: np.array([[1.0, 1.0], [3.0, 1.0], [5.0, 1.0]]),
             1: np.array([[1.0, 20.0], [11.0, 20.0], [13.0, 20.0]])}
    trajs, m = executor.follow_multi(OPEN, Straight(), starts, plans)
    assert m.success_rate == 1.0
    t0 = trajs[0]
    # agent 0 never heads to waypoint 2 before agent 1 is within eps of its waypoint 1
    for k in range(len(t0)):
        if t0.waypoint_idx[k] == 2 and not t0.done[k]:
            t1 = trajs[1]
            assert math.dist(t1.pos[k - 1], plans[1][1]) <= executor.EPS_WP or t1.waypoint_idx[k] == 2
    assert m.agents[0].cum_cost == 0.0  # open map


def test_multi_wait_rule_yields_to_lower_id():
    # head-on along a line; agent 1 must stop whenever agent 0 is close and moving
    starts = {0: np.array([5.0, 5.0]), 1: np.array([8.0, 5.0])}
    plans = {0: np.array([[5.0, 5.0], [12.0, 5.0]]), 1: np.array([[8.0, 5.0], [8.0, 9.0]])}
    trajs, _ = executor.follow_multi(OPEN, Straight(), starts, plans, rho_agent=2.0)
    a, b = trajs
    for k in range(1, min(len(a), len(b))):
        moved0 = a.pos[k] != a.pos[k - 1]
        moved1 = b.pos[k] != b.pos[k - 1]
        if moved0 and moved1:
            assert math.dist(a.pos[k - 1], b.pos[k - 1]) > 2.0
            assert math.dist(a.pos[k], b.pos[k]) > 2.0


def test_multi_finished_agents_stop_accruing(world):
    starts = {0: np.array([45.0, 30.0]), 1: np.array([5.0, 5.0])}
    plans = {0: np.array([[45.0, 30.0]]), 1: np.array([[5.0, 5.0], [5.0, 15.0]])}
    trajs, m = executor.follow_multi(world, Straight(), starts, plans)
    assert m.agents[0].success and m.agents[0].cum_cost == 0.0 and len(trajs[0]) == 1
    assert m.agents[1].success and m.agents[1].steps > 0


def test_multi_validation():
    with pytest.raises(ValueError):
        executor.follow_multi(OPEN, Straight(), {0: np.zeros(2)}, {1: np.zeros((1, 2))})
    with pytest.raises(ValueError):
        executor.follow_multi(OPEN, Straight(), {0: np.zeros(2)}, {0: np.zeros((0, 2))})


def test_policy_only(world):
    trajs, m = executor.run_policy_only(world, Straight(), [((5.0, 5.0), (9.0, 5.0))])
    assert m.success_rate == 1.0 and m.agents[0].steps == 3  # (8, 5) is within tolerance
    # even a start inside the tolerance takes one step
    _, m = executor.run_policy_only(world, Straight(), [((5.0, 5.0), (5.5, 5.0))])
    assert m.agents[0].steps == 1
    _, m = executor.run_policy_only(world, Still(), [((5.0, 5.0), (15.0, 5.0))], budgets=[3])
    assert not m.agents[0].success and m.agents[0].steps == 3
    with pytest.raises(ValueError):
        executor.run_policy_only(world, Still(), [([(1.0, 1.0), (2.0, 2.0)], [(3.0, 3.0), (4.0, 4.0)])])


def test_policy_budget(world):
    assert executor.policy_budget(world, (5.0, 5.0), (6.0, 5.0)) == 40


def test_metrics():
    m = RunMetrics([AgentResult(0, True, 3, 1.0), AgentResult(1, False, 5, 2.0), AgentResult(2, True, 1, 3.0)])
    assert m.mean_cost == 2.0 and m.std_cost == pytest.approx(1.0)
    assert m.success_rate == pytest.approx(2 / 3)
    assert RunMetrics([AgentResult(0, True, 1, 4.0)]).std_cost == 0.0


def test_trajectory_csv_roundtrip(tmp_path, world):
    tr, _ = executor.follow_single(world, Straight(), (45.0, 5.0), [(50.0, 5.0)], agent_id=4)
    path = tmp_path / "t.csv"
    executor.write_trajectories(path, [("r1", [tr]), ("r2", [tr])])
    back = executor.read_trajectories(path)
    assert sorted(back) == ["r1", "r2"]
    b = back["r1"][0]
    assert b.agent_id == 4 and b.pos == tr.pos and b.cost == tr.cost and b.done == tr.done
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        executor.read_trajectories(bad)
