import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_rel_error, numeric_grad
from edm3d import layers
from edm3d.errors import DataError, ShapeError
from edm3d.layers import ConvLayer, FcLayer


def sliding_window_conv(x, w, b):
    """Direct loop over output positions with explicit bounds checks for padding."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    out = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = b[oi]
                    for ci in range(c):
                        for di in range(3):
                            for dj in range(3):
                                y, xx = i + di - 1, j + dj - 1
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += w[oi, ci, di, dj] * x[ni, ci, y, xx]
                    out[ni, oi, i, j] = acc
    return out


def window_max_scan(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for idx in np.ndindex(n, c, h // 2, w // 2):
        a, b, i, j = idx
        out[idx] = max(x[a, b, 2 * i + di, 2 * j + dj] for di in (0, 1) for dj in (0, 1))
    return out


def rand(rng, *shape):
    return rng.standard_normal(shape)


# conv ---------------------------------------------------------------------

def test_conv_zero_input_gives_bias():
    layer = ConvLayer(np.ones((2, 1, 3, 3)), np.array([0.5, -2.0]))
    out = layers.conv2d_forward(np.zeros((1, 1, 3, 3)), layer)
    assert np.all(out[0, 0] == 0.5) and np.all(out[0, 1] == -2.0)


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    x = rand(rng, 2, 3, 5, 7)
    assert np.array_equal(layers.conv2d_forward(x, ConvLayer(w, np.zeros(3))), x)


def test_conv_matches_sliding_window_oracle():
    rng = np.random.default_rng(1)
    x, w = rand(rng, 1, 1, 4, 4), rand(rng, 1, 1, 3, 3)
    out = layers.conv2d_forward(x, ConvLayer(w, np.zeros(1)))
    np.testing.assert_allclose(out, sliding_window_conv(x, w, np.zeros(1)), rtol=1e-12, atol=1e-12)


def test_conv_multichannel_matches_oracle():
    rng = np.random.default_rng(2)
    x, w, b = rand(rng, 2, 3, 5, 6), rand(rng, 4, 3, 3, 3), rand(rng, 4)
    np.testing.assert_allclose(layers.conv2d_forward(x, ConvLayer(w, b)), sliding_window_conv(x, w, b), atol=1e-12)


@given(st.integers(1, 9), st.integers(1, 9))
def test_conv_same_size(h, w):
    out = layers.conv2d_forward(np.ones((1, 2, h, w), np.float32), ConvLayer(np.ones((3, 2, 3, 3), np.float32), np.zeros(3, np.float32)))
    assert out.shape == (1, 3, h, w)
    assert out.dtype == np.float32


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        layers.conv2d_forward(np.zeros((1, 2, 4, 4)), ConvLayer(np.zeros((1, 3, 3, 3)), np.zeros(1)))


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(3)
    x, layer = rand(rng, 1, 2, 4, 4), ConvLayer(rand(rng, 3, 2, 3, 3), rand(rng, 3))
    gx, gw, gb = layers.conv2d_backward(x, layer, np.zeros((1, 3, 4, 4)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_bias_is_plain_sum():
    rng = np.random.default_rng(4)
    x, layer = rand(rng, 2, 2, 4, 4), ConvLayer(rand(rng, 3, 2, 3, 3), rand(rng, 3))
    g = rand(rng, 2, 3, 4, 4)
    _, _, gb = layers.conv2d_backward(x, layer, g)
    np.testing.assert_allclose(gb, [g[:, o].sum() for o in range(3)], rtol=1e-12)


def test_conv_backward_shape_error():
    layer = ConvLayer(np.zeros((3, 2, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        layers.conv2d_backward(np.zeros((1, 2, 4, 4)), layer, np.zeros((1, 2, 4, 4)))


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(5)
    x, w, b = rand(rng, 1, 2, 5, 5), rand(rng, 3, 2, 3, 3), rand(rng, 3)
    r = rand(rng, 1, 3, 5, 5)
    layer = ConvLayer(w, b)

    def f():
        return float(np.sum(layers.conv2d_forward(x, layer) * r))

    gx, gw, gb = layers.conv2d_backward(x, layer, r)
    assert max_rel_error(gx, numeric_grad(f, x)) < 1e-4
    assert max_rel_error(gw, numeric_grad(f, w)) < 1e-4
    assert max_rel_error(gb, numeric_grad(f, b)) < 1e-4


def test_conv_chunked_path_matches(monkeypatch):
    rng = np.random.default_rng(6)
    x, layer = rand(rng, 5, 2, 6, 6), ConvLayer(rand(rng, 3, 2, 3, 3), rand(rng, 3))
    g = rand(rng, 5, 3, 6, 6)
    full = layers.conv2d_forward(x, layer), *layers.conv2d_backward(x, layer, g)
    monkeypatch.setattr(layers, "_COLS_BUDGET", 2 * 6 * 6 * 18)
    chunked = layers.conv2d_forward(x, layer), *layers.conv2d_backward(x, layer, g)
    for a, b in zip(full, chunked):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


# maxpool -----------------------------------------------------------------

def test_maxpool_constant_input_ties_top_left():
    y, argmax = layers.maxpool2x2_forward(np.full((1, 2, 4, 6), 3.0))
    assert np.all(y == 3.0) and y.shape == (1, 2, 2, 3)
    assert np.all(argmax == 0)


def test_maxpool_single_window():
    y, argmax = layers.maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert y.item() == 4.0 and argmax.item() == 3


def test_maxpool_tie_picks_lowest_linear_index():
    _, argmax = layers.maxpool2x2_forward(np.array([[[[0.0, 5.0], [5.0, 1.0]]]]))
    assert argmax.item() == 1


def test_maxpool_matches_window_scan():
    x = np.random.default_rng(7).standard_normal((2, 3, 4, 6))
    y, _ = layers.maxpool2x2_forward(x)
    assert np.array_equal(y, window_max_scan(x))


def test_maxpool_odd_extent():
    with pytest.raises(ShapeError):
        layers.maxpool2x2_forward(np.zeros((1, 1, 3, 4)))


def test_maxpool_backward_routes_to_argmax():
    x = np.random.default_rng(8).permutation(64).astype(float).reshape(1, 1, 8, 8)
    y, argmax = layers.maxpool2x2_forward(x)
    gx = layers.maxpool2x2_backward(np.ones_like(y), argmax, x.shape)
    assert gx.sum() == 16
    windows = gx.reshape(1, 1, 4, 2, 4, 2).sum(axis=(3, 5))
    assert np.all(windows == 1)
    assert np.array_equal(gx == 1, x == np.repeat(np.repeat(y, 2, 2), 2, 3))
    assert not layers.maxpool2x2_backward(np.zeros_like(y), argmax, x.shape).any()


def test_maxpool_backward_finite_differences():
    rng = np.random.default_rng(9)
    # distinct values spaced >= 0.01 apart keep +/-eps perturbations away from ties
    x = (rng.permutation(2 * 2 * 4 * 4) * 0.01).reshape(2, 2, 4, 4)
    r = rand(rng, 2, 2, 2, 2)
    _, argmax = layers.maxpool2x2_forward(x)
    gx = layers.maxpool2x2_backward(r, argmax, x.shape)
    num = numeric_grad(lambda: float(np.sum(layers.maxpool2x2_forward(x)[0] * r)), x)
    assert max_rel_error(gx, num) < 1e-4


def test_maxpool_backward_shape_error():
    with pytest.raises(ShapeError):
        layers.maxpool2x2_backward(np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 2, 2), np.uint8), (1, 1, 4, 4))


# relu --------------------------------------------------------------------

def test_relu_examples():
    assert layers.relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert layers.relu_backward(np.array([-1.0, 0.0, 2.0]), np.ones(3)).tolist() == [0.0, 0.0, 1.0]


def test_relu_finite_differences():
    rng = np.random.default_rng(10)
    x = rng.uniform(0.1, 1.0, 20) * rng.choice([-1, 1], 20)
    r = rand(rng, 20)
    num = numeric_grad(lambda: float(np.sum(layers.relu(x) * r)), x)
    assert max_rel_error(layers.relu_backward(x, r), num) < 1e-4


# fully connected ---------------------------------------------------------

def test_fc_identity_and_zero_input():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(layers.fc_forward(x, FcLayer(np.eye(3), np.zeros(3))), x)
    b = np.array([1.0, -1.0])
    assert np.array_equal(layers.fc_forward(np.zeros((3, 4)), FcLayer(np.ones((2, 4)), b)), np.tile(b, (3, 1)))


def test_fc_shape_error():
    with pytest.raises(ShapeError):
        layers.fc_forward(np.zeros((2, 5)), FcLayer(np.zeros((2, 4)), np.zeros(2)))


def test_fc_finite_differences():
    rng = np.random.default_rng(11)
    x, w, b, r = rand(rng, 3, 5), rand(rng, 4, 5), rand(rng, 4), rand(rng, 3, 4)
    layer = FcLayer(w, b)

    def f():
        return float(np.sum(layers.fc_forward(x, layer) * r))

    gx, gw, gb = layers.fc_backward(x, layer, r)
    for analytic, target in ((gx, x), (gw, w), (gb, b)):
        assert max_rel_error(analytic, numeric_grad(f, target)) < 1e-4


# softmax cross-entropy ---------------------------------------------------

def direct_cross_entropy(logits, labels):
    total = 0.0
    for row, y in zip(logits.tolist(), labels):
        denom = math.fsum(math.exp(v) for v in row)
        total += -math.log(math.exp(row[y]) / denom)
    return total / len(labels)


def test_uniform_logits_loss_ln4():
    loss, _ = layers.softmax_cross_entropy(np.zeros((5, 4)), [0, 1, 2, 3, 1])
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    assert loss == pytest.approx(1.386294, abs=1e-6)


def test_saturated_logit_loss_zero():
    logits = np.zeros((2, 4))
    logits[0, 2] = logits[1, 0] = 1000.0
    loss, grad = layers.softmax_cross_entropy(logits, [2, 0])
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_cross_entropy_matches_direct_formula():
    rng = np.random.default_rng(12)
    logits, labels = rand(rng, 3, 4), [3, 0, 2]
    loss, grad = layers.softmax_cross_entropy(logits, labels)
    assert loss == pytest.approx(direct_cross_entropy(logits, labels), rel=1e-12)
    num = numeric_grad(lambda: layers.softmax_cross_entropy(logits, labels)[0], logits)
    assert max_rel_error(grad, num) < 1e-4


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DataError):
        layers.softmax_cross_entropy(np.zeros((2, 4)), [0, 4])
    with pytest.raises(DataError):
        layers.softmax_cross_entropy(np.zeros((1, 2)), [-1])


@settings(max_examples=60)
@given(st.lists(st.floats(-1e4, 1e4), min_size=8, max_size=8), st.integers(0, 3), st.integers(0, 3))
def test_softmax_rows_and_loss_finite(vals, y0, y1):
    logits = np.array(vals).reshape(2, 4)
    p = layers.softmax(logits)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(p >= 0) and np.all(p <= 1)
    loss, grad = layers.softmax_cross_entropy(logits, [y0, y1])
    assert math.isfinite(loss) and np.all(np.isfinite(grad))


def test_softmax_moderate_logits_strictly_inside_unit_interval():
    p = layers.softmax(np.random.default_rng(13).uniform(-20, 20, (4, 4)))
    assert np.all(p > 0) and np.all(p < 1)
