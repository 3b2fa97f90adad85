import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import project_brute
from safenav.gcrl.categorical import (AtomGrid, categorical_project, cost_grid, distance_grid,
                                      mean_of, project_batch, softmax)

grids = st.sampled_from([distance_grid(), cost_grid(), AtomGrid(-3.0, 5.0, 7)])


@given(grids, st.data())
def test_projection_matches_brute_force(grid, data):
    m = data.draw(st.integers(1, 12))
    values = data.draw(hnp.arrays(float, m, elements=st.floats(-20, 60)))
    w = data.draw(hnp.arrays(float, m, elements=st.floats(0.0, 1.0)))
    if w.sum() == 0:
        w[0] = 1.0
    p = w / w.sum()
    out = categorical_project(grid, values, p)
    assert abs(out.sum() - 1.0) <= 1e-9
    assert np.all(out >= 0)
    assert np.abs(out - project_brute(grid.atoms, values, p)).sum() <= 1e-12


@given(grids, st.floats(-50, 80))
def test_projection_preserves_clipped_mean(grid, v):
    out = categorical_project(grid, [v], [1.0])
    clipped = min(max(v, grid.v_min), grid.v_max)
    assert mean_of(out, grid) == pytest.approx(clipped, abs=1e-9)


def test_on_atom_is_point_mass():
    g = distance_grid()
    out = categorical_project(g, [5.0], [1.0])
    assert out[4] == 1.0 and out.sum() == 1.0


def test_shifted_distribution_example():
    g = distance_grid()
    # one-step backup of a point mass at 3 lands on atom 4
    probs = np.zeros(20)
    probs[2] = 1.0
    out = categorical_project(g, g.atoms + 1.0, probs)
    assert out[3] == 1.0
    # mass at the top atom stays there after the shift
    probs = np.zeros(20)
    probs[-1] = 1.0
    assert categorical_project(g, g.atoms + 1.0, probs)[-1] == 1.0


def test_batch_agrees_with_rows(rng):
    g = cost_grid()
    v = rng.uniform(-5, 50, size=(6, 40))
    p = softmax(rng.normal(size=(6, 40)))
    out = project_batch(g, v, p)
    for i in range(6):
        assert np.allclose(out[i], categorical_project(g, v[i], p[i]))


def test_errors():
    g = distance_grid()
    with pytest.raises(ValueError):
        categorical_project(g, [], [])
    with pytest.raises(ValueError):
        categorical_project(g, [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        categorical_project(g, [1.0], [-1.0])
    with pytest.raises(ValueError):
        AtomGrid(1.0, 1.0, 5)
    with pytest.raises(ValueError):
        AtomGrid(0.0, 1.0, 1)


def test_grid_shapes():
    assert np.array_equal(distance_grid().atoms, np.arange(1.0, 21.0))
    c = cost_grid()
    assert c.atoms[0] == 0.0 and c.atoms[-1] == 40.0 and len(c.atoms) == 40


@given(hnp.arrays(float, (3, 5), elements=st.floats(-500, 500)))
def test_softmax_rows_sum_to_one(x):
    p = softmax(x)
    assert np.allclose(p.sum(axis=1), 1.0) and np.all(p >= 0)
