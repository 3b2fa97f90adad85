import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import fd_input_grad, fd_param_grad
from safenav import tinynn
from safenav.tinynn import DenseNet, OptimState


def random_net(rng, head="linear"):
    sizes = [int(rng.integers(1, 5))] + [int(rng.integers(2, 7)) for _ in range(rng.integers(1, 3))] \
        + [int(rng.integers(1, 4))]
    return DenseNet.init(sizes, rng, head=head)


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


@pytest.mark.parametrize("head", ["linear", "tanh"])
def test_gradients_match_finite_differences(head):
    rng = np.random.default_rng(0)
    for _ in range(20):
        net = random_net(rng, head)
        x = rng.normal(size=(3, net.in_dim))
        up = rng.normal(size=(3, net.out_dim))
        g = tinynn.gradients(net, x, up)
        assert max_rel_err(g.flat, fd_param_grad(net, x, up)) < 1e-4
        assert max_rel_err(g.input, fd_input_grad(net, x, up)) < 1e-4


def test_single_vector_shapes(rng):
    net = DenseNet.init([3, 5, 2], rng)
    x = rng.normal(size=3)
    assert tinynn.forward(net, x).shape == (2,)
    g = tinynn.gradients(net, x, np.ones(2))
    assert g.input.shape == (3,)
    assert np.allclose(tinynn.forward(net, x[None])[0], tinynn.forward(net, x))


def test_bad_inputs(rng):
    net = DenseNet.init([3, 4, 2], rng)
    with pytest.raises(ValueError):
        tinynn.forward(net, np.zeros(4))
    with pytest.raises(ValueError):
        tinynn.forward(net, np.array([0.0, np.nan, 1.0]))
    with pytest.raises(ValueError):
        tinynn.gradients(net, np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DenseNet([3, 2], [np.zeros((2, 3))], [np.zeros(2)])
    with pytest.raises(ValueError):
        DenseNet.init([2, 2], rng, head="relu")


def test_flat_views_share_storage(rng):
    net = DenseNet.init([2, 3, 1], rng)
    net.weights[0][0, 0] = 42.0
    assert 42.0 in net.flat
    c = net.copy()
    c.flat[:] = 0
    assert net.weights[0][0, 0] == 42.0 and c != net


def test_adam_matches_textbook(rng):
    p = rng.normal(size=5)
    ref = p.copy()
    st_ = OptimState.for_params([p], lr=0.01)
    m = v = np.zeros(5)
    for t in range(1, 6):
        g = rng.normal(size=5)
        tinynn.optim_step([p], [g], st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p, ref, atol=1e-14)


def test_adam_rejects_nonfinite(rng):
    p = np.zeros(2)
    st_ = OptimState.for_params([p], 0.1)
    with pytest.raises(FloatingPointError):
        tinynn.optim_step([p], [np.array([np.inf, 0.0])], st_)
    with pytest.raises(ValueError):
        tinynn.optim_step([p], [np.zeros(3)], st_)


@given(st.floats(0.0, 1.0))
def test_polyak_is_convex_combination(rho):
    rng = np.random.default_rng(3)
    a, b = DenseNet.init([2, 3, 1], rng), DenseNet.init([2, 3, 1], rng)
    before = a.flat.copy()
    tinynn.polyak_update(a, b, rho)
    assert np.allclose(a.flat, (1 - rho) * before + rho * b.flat)


def test_polyak_validation(rng):
    a, b = DenseNet.init([2, 3, 1], rng), DenseNet.init([2, 4, 1], rng)
    with pytest.raises(ValueError):
        tinynn.polyak_update(a, b, 0.5)
    with pytest.raises(ValueError):
        tinynn.polyak_update(a, a.copy(), 1.5)


def test_tanh_head_bounded(rng):
    net = DenseNet.init([2, 8, 2], rng, head="tanh")
    out = tinynn.forward(net, rng.normal(scale=100, size=(50, 2)))
    assert np.all(np.abs(out) <= 1.0)


def test_forward_backward_reuses_output(rng):
    net = DenseNet.init([3, 4, 2], rng)
    x = rng.normal(size=(4, 3))
    val, out, g = tinynn.forward_backward(net, x, lambda y: (float(np.sum(y ** 2)), 2 * y))
    assert np.allclose(out, tinynn.forward(net, x))
    assert np.allclose(g.flat, tinynn.gradients(net, x, 2 * out).flat)
    _, _, g2 = tinynn.forward_backward(net, x, lambda y: (0.0, 2 * y), need_params=False)
    assert g2.flat is None and np.allclose(g2.input, g.input)
