"""Layer-level numerical checks: analytic gradients vs central finite differences."""

import numpy as np
import pytest

from forensim import nn
from forensim.errors import ConfigurationError, DimensionError

EPS = 1e-5
TOL = 1e-7  # float64 layer-level bound; far tighter than the end-to-end gate


def fd_input_gradient(f, x, dout):
    """Central finite differences of sum(f(x) * dout) w.r.t. x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + EPS
        up = float((f() * dout).sum())
        flat[i] = old - EPS
        dn = float((f() * dout).sum())
        flat[i] = old
        gflat[i] = (up - dn) / (2 * EPS)
    return g


def relative_error(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def rng64(seed=0):
    return np.random.default_rng(seed)


# -- convolution -------------------------------------------------------------


def test_conv_forward_hand_example():
    r = rng64(0)
    conv = nn.Conv2D(1, 1, 2, stride=1, rng=r, dtype=np.float64)
    conv.W[...] = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    conv.b[...] = 0.5
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    out, _ = conv.forward(x)
    # window at (0,0): 0*1 + 1*2 + 3*3 + 4*4 = 27, plus bias
    expected = np.array([[[[27.5, 37.5], [57.5, 67.5]]]])
    assert np.allclose(out, expected)


def test_conv_stride_geometry():
    conv = nn.Conv2D(3, 4, 5, stride=2, rng=rng64(0))
    assert conv.out_hw(128, 128) == (62, 62)
    assert conv.out_hw(5, 5) == (1, 1)
    with pytest.raises(DimensionError):
        conv.out_hw(4, 10)


def test_conv_gradients_match_fd():
    r = rng64(1)
    conv = nn.Conv2D(2, 3, 3, stride=2, rng=r, dtype=np.float64)
    x = r.normal(size=(2, 2, 9, 9))
    out, cache = conv.forward(x)
    dout = r.normal(size=out.shape)
    dx, grads = conv.backward(dout, cache)

    assert relative_error(dx, fd_input_gradient(lambda: conv.forward(x)[0], x, dout)) < TOL
    assert relative_error(grads["W"], fd_input_gradient(lambda: conv.forward(x)[0], conv.W, dout)) < TOL
    assert relative_error(grads["b"], fd_input_gradient(lambda: conv.forward(x)[0], conv.b, dout)) < TOL


def test_conv_without_bias_has_no_bias_parameter():
    conv = nn.Conv2D(2, 3, 3, rng=rng64(0), bias=False)
    assert conv.b is None
    assert set(conv.params()) == {"W"}
    x = rng64(1).normal(size=(1, 2, 5, 5))
    out, cache = conv.forward(x)
    _, grads = conv.backward(np.ones_like(out), cache)
    assert set(grads) == {"W"}


def test_conv_channel_mismatch_raises():
    conv = nn.Conv2D(3, 4, 3, rng=rng64(0))
    with pytest.raises(DimensionError):
        conv.forward(np.zeros((1, 2, 8, 8)))


# -- pooling -----------------------------------------------------------------


def test_maxpool_forward_hand_example():
    pool = nn.MaxPool2D(2, 2)
    x = np.array([[[[1.0, 2, 5, 3], [4, 0, 1, 2], [7, 1, 0, 0], [2, 2, 3, 9]]]])
    out, _ = pool.forward(x)
    assert np.array_equal(out, np.array([[[[4.0, 5.0], [7.0, 9.0]]]]))


def test_maxpool_gradients_match_fd():
    r = rng64(2)
    pool = nn.MaxPool2D(3, 2)
    # distinct values with gaps far above the FD step, so no argmax flips
    x = (r.permutation(2 * 3 * 9 * 9).astype(np.float64) * 0.01).reshape(2, 3, 9, 9)
    out, cache = pool.forward(x)
    dout = r.normal(size=out.shape)
    dx, _ = pool.backward(dout, cache)
    assert relative_error(dx, fd_input_gradient(lambda: pool.forward(x)[0], x, dout)) < TOL


def test_avgpool_gradients_match_fd():
    r = rng64(3)
    pool = nn.AvgPool2D(3, 2)
    x = r.normal(size=(2, 2, 7, 7))
    out, cache = pool.forward(x)
    dout = r.normal(size=out.shape)
    dx, _ = pool.backward(dout, cache)
    assert relative_error(dx, fd_input_gradient(lambda: pool.forward(x)[0], x, dout)) < TOL


def test_global_avgpool_forward_and_backward():
    r = rng64(4)
    pool = nn.GlobalAvgPool()
    x = r.normal(size=(2, 3, 4, 5))
    out, cache = pool.forward(x)
    assert out.shape == (2, 3)
    assert np.allclose(out, x.mean(axis=(2, 3)))
    dout = r.normal(size=out.shape)
    dx, _ = pool.backward(dout, cache)
    assert relative_error(dx, fd_input_gradient(lambda: pool.forward(x)[0], x, dout)) < TOL


# -- batch norm ----------------------------------------------------------------


def test_batchnorm_train_output_is_standardized():
    r = rng64(5)
    bn = nn.BatchNorm2D(3, dtype=np.float64)
    x = r.normal(loc=3.0, scale=2.0, size=(8, 3, 6, 6))
    out, _ = bn.forward(x, train=True)
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batchnorm_eval_uses_running_stats():
    bn = nn.BatchNorm2D(2, dtype=np.float64)
    bn.running_mean[...] = [1.0, -1.0]
    bn.running_var[...] = [4.0, 0.25]
    x = np.zeros((1, 2, 2, 2))
    out, _ = bn.forward(x, train=False)
    assert np.allclose(out[0, 0], (0 - 1.0) / np.sqrt(4.0 + bn.eps), atol=1e-9)
    assert np.allclose(out[0, 1], (0 + 1.0) / np.sqrt(0.25 + bn.eps), atol=1e-9)


def test_batchnorm_running_stat_update():
    bn = nn.BatchNorm2D(1, dtype=np.float64, momentum=0.1)
    x = np.full((2, 1, 2, 2), 10.0)
    bn.forward(x, train=True)
    assert bn.running_mean[0] == pytest.approx(0.9 * 0.0 + 0.1 * 10.0)
    assert bn.running_var[0] == pytest.approx(0.9 * 1.0 + 0.1 * 0.0)


def test_batchnorm_train_gradients_match_fd():
    r = rng64(6)
    bn = nn.BatchNorm2D(2, dtype=np.float64)
    bn.gamma[...] = r.uniform(0.5, 1.5, 2)
    bn.beta[...] = r.normal(size=2)
    x = r.normal(size=(4, 2, 3, 3))
    out, cache = bn.forward(x, train=True)
    dout = r.normal(size=out.shape)
    dx, grads = bn.backward(dout, cache)

    assert relative_error(dx, fd_input_gradient(lambda: bn.forward(x, train=True)[0], x, dout)) < TOL
    assert relative_error(
        grads["gamma"], fd_input_gradient(lambda: bn.forward(x, train=True)[0], bn.gamma, dout)
    ) < TOL
    assert relative_error(
        grads["beta"], fd_input_gradient(lambda: bn.forward(x, train=True)[0], bn.beta, dout)
    ) < TOL


# -- activations and dense -----------------------------------------------------


@pytest.mark.parametrize("name", ["tanh", "relu", "linear"])
def test_activation_gradients_match_fd(name):
    r = rng64(7)
    act = nn.Activation(name)
    x = r.normal(size=(3, 5)) + 0.1  # keep away from relu's kink
    out, cache = act.forward(x)
    dout = r.normal(size=out.shape)
    dx, _ = act.backward(dout, cache)
    assert relative_error(dx, fd_input_gradient(lambda: act.forward(x)[0], x, dout)) < TOL


def test_activation_unknown_name_raises():
    with pytest.raises(ConfigurationError):
        nn.Activation("sigmoid")


def test_dense_forward_and_gradients():
    r = rng64(8)
    fc = nn.Dense(4, 3, rng=r, dtype=np.float64)
    x = r.normal(size=(5, 4))
    out, cache = fc.forward(x)
    assert np.allclose(out, x @ fc.W + fc.b)
    dout = r.normal(size=out.shape)
    dx, grads = fc.backward(dout, cache)
    assert relative_error(dx, fd_input_gradient(lambda: fc.forward(x)[0], x, dout)) < TOL
    assert relative_error(grads["W"], fd_input_gradient(lambda: fc.forward(x)[0], fc.W, dout)) < TOL
    assert relative_error(grads["b"], fd_input_gradient(lambda: fc.forward(x)[0], fc.b, dout)) < TOL


def test_dense_width_mismatch_raises():
    fc = nn.Dense(4, 3, rng=rng64(0))
    with pytest.raises(DimensionError):
        fc.forward(np.zeros((2, 5)))


# -- softmax / cross entropy ---------------------------------------------------


def test_softmax_rows_sum_to_one_and_shift_invariance():
    r = rng64(9)
    z = r.normal(size=(6, 4)) * 10
    p = nn.softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(nn.softmax(z + 100.0), p)


def test_cross_entropy_hand_value():
    # two logits (0, 0): p = (0.5, 0.5), loss = ln 2
    logits = np.zeros((1, 2))
    loss, dlogits = nn.cross_entropy(logits, np.array([1]))
    assert loss == pytest.approx(np.log(2.0))
    assert np.allclose(dlogits, [[0.5, -0.5]])


def test_cross_entropy_gradient_matches_fd():
    r = rng64(10)
    logits = r.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    _, dlogits = nn.cross_entropy(logits, labels)
    g = np.zeros_like(logits)
    flat, gflat = logits.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + EPS
        up = nn.cross_entropy(logits, labels)[0]
        flat[i] = old - EPS
        dn = nn.cross_entropy(logits, labels)[0]
        flat[i] = old
        gflat[i] = (up - dn) / (2 * EPS)
    assert relative_error(dlogits, g) < TOL


# -- schedule and optimizer ------------------------------------------------------


def test_lr_schedule_halves_in_steps():
    assert nn.lr_at_epoch(1, 0.001, 3) == 0.001
    assert nn.lr_at_epoch(3, 0.001, 3) == 0.001
    assert nn.lr_at_epoch(4, 0.001, 3) == 0.0005
    assert nn.lr_at_epoch(7, 0.001, 3) == 0.00025
    assert nn.lr_at_epoch(30, 0.001, 3) == pytest.approx(0.001 * 0.5**9)
    with pytest.raises(ConfigurationError):
        nn.lr_at_epoch(0, 0.001, 3)


def test_sgd_plain_step():
    p = np.array([1.0, 2.0])
    opt = nn.SGD({"p": p})
    opt.step({"p": np.array([0.5, -1.0])}, lr=0.1)
    assert np.allclose(p, [0.95, 2.1])


def test_sgd_momentum_accumulates():
    p = np.zeros(1)
    opt = nn.SGD({"p": p}, momentum=0.5)
    g = {"p": np.ones(1)}
    opt.step(g, lr=1.0)  # v = 1, p = -1
    opt.step(g, lr=1.0)  # v = 1.5, p = -2.5
    assert p[0] == pytest.approx(-2.5)


def test_sgd_weight_decay():
    p = np.array([2.0])
    opt = nn.SGD({"p": p}, weight_decay=0.1)
    opt.step({"p": np.zeros(1)}, lr=1.0)
    assert p[0] == pytest.approx(2.0 - 0.1 * 2.0)


def test_sgd_updates_in_place_and_skips_missing():
    p = np.array([1.0])
    q = np.array([1.0])
    opt = nn.SGD({"p": p, "q": q})
    opt.step({"p": np.array([1.0])}, lr=0.5)
    assert p[0] == 0.5 and q[0] == 1.0


def test_accumulate_sums_with_prefix():
    total = {}
    nn.accumulate(total, {"W": np.ones(2)}, "fc1/")
    nn.accumulate(total, {"W": np.ones(2) * 2}, "fc1/")
    assert np.allclose(total["fc1/W"], [3.0, 3.0])
