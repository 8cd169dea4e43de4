import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lf4d.errors import BadLabel, ShapeMismatch, StaleCache
from lf4d.nn import (
    SGD, Conv2D, FullyConnected, MaxPool2D, Network, ReLU, Upsample2x, backward, forward, grad_check, sgd_step,
    softmax, softmax_loss,
)
from lf4d.nn.gradcheck import relative_error

from oracles import conv2d_loop, maxpool_route, softmax_loss_exact

LN12 = 2.484906649788000310  # ln 12, 40-digit decimal evaluation
LOSS_123 = 0.4076059644443803045  # -log(e^3 / (e^1 + e^2 + e^3)), 40-digit decimal evaluation


def rng(seed=0):
    return np.random.default_rng(seed)


def test_fc_identity():
    fc = FullyConnected((4, 1, 1), 4)
    fc.params["weight"][:] = np.eye(4)
    x = rng().standard_normal((3, 4, 1, 1))
    np.testing.assert_array_equal(Network([fc]).predict(x), x)


def test_relu_values():
    y, _ = ReLU().forward(np.array([-1.0, 0.0, 2.0]).reshape(1, 3, 1, 1))
    np.testing.assert_array_equal(y.ravel(), [0, 0, 2])


def test_two_conv_net_matches_loop_oracle():
    r = rng(1)
    c1 = Conv2D(2, 3, 3, pad=1, rng=r)
    c2 = Conv2D(3, 2, (2, 3), stride=(2, 1), rng=r)
    for c in (c1, c2):
        c.params["bias"][:] = r.standard_normal(c.params["bias"].shape)
    x = r.standard_normal((2, 2, 7, 6))
    got = Network([c1, c2]).predict(x)
    ref = conv2d_loop(conv2d_loop(x, c1.params["weight"], c1.params["bias"], pad=(1, 1)),
                      c2.params["weight"], c2.params["bias"], stride=(2, 1))
    assert np.max(np.abs(got - ref)) < 1e-12


def test_conv1x1_is_per_pixel_matmul():
    r = rng(2)
    c = Conv2D(5, 3, 1, rng=r)
    x = r.standard_normal((2, 5, 4, 3))
    ref = np.einsum("oi,nihw->nohw", c.params["weight"][:, :, 0, 0], x) + c.params["bias"][None, :, None, None]
    np.testing.assert_allclose(c.forward(x)[0], ref, rtol=0, atol=1e-13)


def test_shape_mismatch_names_layer():
    net = Network([Conv2D(3, 4, 3), ReLU(), FullyConnected((4, 2, 2), 2)], names=["c", "r", "head"])
    with pytest.raises(ShapeMismatch, match="head"):
        net.forward(np.zeros((1, 3, 5, 5)))


def test_zero_upstream_gives_zero_grads():
    r = rng(3)
    net = Network([Conv2D(2, 3, 3, rng=r), ReLU(), MaxPool2D(2), FullyConnected((3, 2, 2), 4, rng=r)])
    x = r.standard_normal((2, 2, 6, 6))
    out, cache = forward(net, x)
    grads, dx = backward(net, cache, np.zeros_like(out))
    assert not np.any(dx)
    assert all(not np.any(g) for gd in grads for g in gd.values())


def test_single_conv_grads_match_finite_differences():
    r = rng(4)
    conv = Conv2D(2, 3, 3, stride=2, pad=1, rng=r)
    x = r.standard_normal((2, 2, 5, 5))
    proj = r.standard_normal(conv.forward(x)[0].shape)
    _, cache = conv.forward(x)
    dx, grads = conv.backward(cache, proj)
    h = 1e-5
    w = conv.params["weight"]
    worst = 0.0
    for idx in np.ndindex(w.shape):
        orig = w[idx]
        w[idx] = orig + h
        fp = np.sum(conv.forward(x)[0] * proj)
        w[idx] = orig - h
        fm = np.sum(conv.forward(x)[0] * proj)
        w[idx] = orig
        worst = max(worst, relative_error(grads["weight"][idx], (fp - fm) / (2 * h)))
    assert worst < 1e-6


def test_maxpool_routes_to_argmax():
    x = np.array([[1.0, 3.0, 2.0, 2.0], [0.0, 3.0, 2.0, 1.0], [5.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]]).reshape(1, 1, 4, 4)
    pool = MaxPool2D(2)
    y, cache = pool.forward(x)
    np.testing.assert_array_equal(y.ravel(), [3, 2, 5, 0])
    dy = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
    dx, _ = pool.backward(cache, dy)
    np.testing.assert_array_equal(dx, maxpool_route(x, dy))
    # ties go to the first row-major occurrence
    assert dx[0, 0, 0, 1] == 1 and dx[0, 0, 1, 1] == 0
    assert dx[0, 0, 2, 2] == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 999))
def test_maxpool_routing_property(n, c, hh, ww, seed):
    r = rng(seed)
    x = r.integers(0, 3, size=(n, c, 2 * hh, 2 * ww)).astype(float)  # plenty of ties
    dy = r.standard_normal((n, c, hh, ww))
    pool = MaxPool2D(2)
    _, cache = pool.forward(x)
    np.testing.assert_array_equal(pool.backward(cache, dy)[0], maxpool_route(x, dy))


def test_upsample_preserves_constants():
    up = Upsample2x(3)
    x = np.full((2, 3, 4, 5), 0.37)
    y = up.forward(x)[0]
    assert y.shape == (2, 3, 8, 10)
    np.testing.assert_allclose(y, 0.37, rtol=0, atol=1e-15)


def test_forward_is_bitwise_deterministic():
    r = rng(5)
    net = Network([Conv2D(3, 4, 3, rng=r), ReLU(), MaxPool2D(2), FullyConnected((4, 3, 3), 5, rng=r)])
    x = r.standard_normal((4, 3, 8, 8))
    assert np.array_equal(net.predict(x), net.predict(x))


def test_stale_cache():
    net = Network([FullyConnected((2, 1, 1), 2, rng=rng())])
    out, cache = net.forward(np.ones((1, 2, 1, 1)))
    sgd_step(net, [{"weight": np.zeros((2, 2)), "bias": np.zeros(2)}], 0.1)
    with pytest.raises(StaleCache):
        net.backward(cache, out)


# --------------------------------------------------------------------------
# softmax loss


def test_softmax_loss_uniform():
    loss, grad = softmax_loss(np.zeros((3, 12, 1, 1)), [0, 5, 11])
    assert abs(loss - LN12) < 1e-12
    assert abs(loss - math.log(12)) < 1e-12


def test_softmax_loss_saturated():
    s = np.zeros((1, 4, 1, 1))
    s[0, 2] = 1000.0
    loss, _ = softmax_loss(s, [2])
    assert 0 <= loss < 1e-6


def test_softmax_loss_reference_value():
    loss, grad = softmax_loss(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1), [2])
    assert abs(loss - LOSS_123) < 1e-15
    assert abs(loss - softmax_loss_exact([1.0, 2.0, 3.0], 2)) < 1e-15
    expected = softmax(np.array([[1.0, 2.0, 3.0]]))[0] - np.array([0, 0, 1])
    np.testing.assert_allclose(grad.ravel(), expected, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(2, 8), st.integers(0, 10_000))
def test_softmax_loss_properties(n, k, seed):
    r = rng(seed)
    s = r.standard_normal((n, k, 1, 1)) * 5
    t = r.integers(0, k, n)
    loss, grad = softmax_loss(s, t)
    assert loss >= 0
    np.testing.assert_allclose(grad.reshape(n, k).sum(axis=1), 0, atol=1e-12)
    ref = np.mean([softmax_loss_exact(list(s[i, :, 0, 0]), t[i]) for i in range(n)])
    assert abs(loss - ref) < 1e-12


def test_bad_label():
    with pytest.raises(BadLabel):
        softmax_loss(np.zeros((2, 3, 1, 1)), [0, 3])
    with pytest.raises(BadLabel):
        softmax_loss(np.zeros((2, 3, 1, 1)), [0])


# --------------------------------------------------------------------------
# SGD


def _scalar_net(mult=1.0):
    fc = FullyConnected((1, 1, 1), 1, lr_multiplier=mult)
    fc.params["weight"][:] = 1.0
    return Network([fc])


def test_sgd_scalar_arithmetic():
    net = _scalar_net()
    sgd_step(net, [{"weight": np.array([[2.0]]), "bias": np.array([0.0])}], 0.1)
    assert net.layers[0].params["weight"][0, 0] == pytest.approx(0.8, abs=1e-15)


def test_sgd_zero_grads_and_multiplier():
    a, b = _scalar_net(1.0), _scalar_net(10.0)
    g = [{"weight": np.array([[1.0]]), "bias": np.array([0.0])}]
    sgd_step(a, g, 0.01)
    sgd_step(b, g, 0.01)
    da = 1 - a.layers[0].params["weight"][0, 0]
    db = 1 - b.layers[0].params["weight"][0, 0]
    assert db == pytest.approx(10 * da, rel=1e-12)
    c = _scalar_net()
    sgd_step(c, [{"weight": np.zeros((1, 1)), "bias": np.zeros(1)}], 0.5)
    assert c.layers[0].params["weight"][0, 0] == 1.0


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        sgd_step(_scalar_net(), [{"weight": np.zeros((2, 1)), "bias": np.zeros(1)}], 0.1)


def test_momentum_zero_equals_plain_sgd():
    a, b = _scalar_net(), _scalar_net()
    g = [{"weight": np.array([[0.3]]), "bias": np.array([0.2])}]
    for _ in range(3):
        sgd_step(a, g, 0.1)
        SGD(0.1, 0.0).step(b, g)
    np.testing.assert_array_equal(a.layers[0].params["weight"], b.layers[0].params["weight"])


def test_lr_multiplier_must_be_positive():
    with pytest.raises(ValueError):
        Conv2D(1, 1, 1, lr_multiplier=0)


# --------------------------------------------------------------------------
# grad_check


def test_gradcheck_linear_layer_exact():
    r = rng(6)
    # the projected output is exactly linear in every parameter and input, so
    # central differences carry no truncation error and a wide step only
    # shrinks the cancellation error (~ eps * |f| / h)
    rep = grad_check(FullyConnected((3, 2, 2), 4, rng=r), r.uniform(-1, 1, (2, 3, 2, 2)), h=1e-2)
    assert rep.checked > 0 and rep.max_error < 1e-10


def test_gradcheck_conv_relu_fc():
    r = rng(7)
    net = Network([Conv2D(2, 3, 3, rng=r), ReLU(), FullyConnected((3, 3, 3), 4, rng=r)])
    x = r.uniform(-1, 1, (2, 2, 5, 5))
    rep = grad_check(net, x, labels=[1, 3])
    assert rep.passed and rep.max_error < 1e-4


def test_gradcheck_flags_relu_kink():
    # a pre-activation sitting exactly at 0 flips its mask under +-h
    relu = ReLU()
    x = np.array([0.0, 0.5, -0.5, 0.0]).reshape(1, 4, 1, 1)
    rep = grad_check(relu, x, n_samples=4)
    skipped = {idx for name, idx in rep.skipped if name == "input"}
    assert skipped == {0, 3}
    assert rep.max_error < 1e-10
