import numpy as np
import numpy.testing as npt
import pytest

from pdcnn.layers import (Conv2d, FullyConnected, Lrn, MaxPool, Relu,
                          ShapeError, conv_extent, softmax_xent,
                          softmax_xent_batch)
from oracles import conv_naive, lrn_naive, max_rel_err, pool_naive


# --- conv2d ---

def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(0, 1, (2, 4, 4))
    w = np.zeros((2, 2, 1, 1))
    w[0, 0, 0, 0] = 1.0
    w[1, 1, 0, 0] = 1.0
    conv = Conv2d(w, np.zeros(2))
    npt.assert_allclose(conv.forward(x), x, atol=0)


def test_conv_hand_example():
    x = np.arange(1.0, 10.0).reshape(1, 3, 3)
    conv = Conv2d(np.ones((1, 1, 2, 2)), np.zeros(1))
    npt.assert_array_equal(conv.forward(x),
                           np.array([[[12.0, 16.0], [24.0, 28.0]]]))


def test_conv_output_channels():
    # a conv1-shaped layer (64 filters over 3 channels) yields 64 channels
    rng = np.random.default_rng(1)
    conv = Conv2d(rng.normal(0, 0.01, (64, 3, 7, 7)), np.zeros(64),
                  stride=4, padding=2)
    out = conv.forward(rng.normal(0, 1, (3, 31, 31)))
    assert out.shape[0] == 64


@pytest.mark.parametrize("seed", range(6))
def test_conv_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    h = int(rng.integers(k, 7))
    w = int(rng.integers(k, 7))
    if conv_extent(h, k, stride, pad) < 1 or conv_extent(w, k, stride, pad) < 1:
        h, w = k + 2, k + 2
    x = rng.normal(0, 1, (ci, h, w))
    weights = rng.normal(0, 1, (co, ci, k, k))
    bias = rng.normal(0, 1, co)
    conv = Conv2d(weights, bias, stride=stride, padding=pad)
    npt.assert_allclose(conv.forward(x),
                        conv_naive(x, weights, bias, stride, pad), atol=1e-12)


def test_conv_linear_in_weights_and_input():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, (2, 5, 5))
    w = rng.normal(0, 1, (3, 2, 3, 3))
    conv1 = Conv2d(w, np.zeros(3), padding=1)
    conv2 = Conv2d(2 * w, np.zeros(3), padding=1)
    npt.assert_allclose(conv2.forward(x), 2 * conv1.forward(x), atol=1e-12)
    npt.assert_allclose(conv1.forward(2 * x), 2 * conv1.forward(x), atol=1e-12)


def test_conv_batched_matches_single():
    rng = np.random.default_rng(4)
    xs = rng.normal(0, 1, (3, 2, 5, 5))
    conv = Conv2d(rng.normal(0, 1, (2, 2, 3, 3)), rng.normal(0, 1, 2), padding=1)
    batched = conv.forward(xs)
    for i in range(3):
        npt.assert_allclose(batched[i], conv.forward(xs[i]), atol=1e-12)


def test_conv_shape_errors():
    conv = Conv2d(np.zeros((1, 2, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((3, 5, 5)))  # channel mismatch
    with pytest.raises(ShapeError):
        conv.forward(np.zeros((2, 2, 2)))  # output extent < 1
    with pytest.raises(ShapeError):
        Conv2d(np.zeros((1, 1, 2, 3)), np.zeros(1))  # non-square kernel


# --- maxpool ---

def test_pool_constant_field():
    out = MaxPool(2, 2).forward(np.full((1, 4, 4), 3.3))
    npt.assert_array_equal(out, np.full((1, 2, 2), 3.3))


def test_pool_hand_example_and_routing():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    pool = MaxPool(2, 2)
    out = pool.forward(x)
    npt.assert_array_equal(out, np.array([[[4.0]]]))
    dx = pool.backward(np.array([[[5.0]]]))
    npt.assert_array_equal(dx, np.array([[[0.0, 0.0], [0.0, 5.0]]]))


def test_pool_positive_homogeneity():
    x = np.random.default_rng(5).random((2, 5, 5)) + 0.1
    pool = MaxPool(3, 2)
    npt.assert_allclose(pool.forward(2 * x), 2 * pool.forward(x), atol=0)


def test_pool_matches_window_maxima():
    rng = np.random.default_rng(6)
    for _ in range(5):
        x = rng.normal(0, 1, (2, 6, 6))
        window, stride = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        out = MaxPool(window, stride).forward(x)
        npt.assert_array_equal(out, pool_naive(x, window, stride))
        assert out.max() <= x.max()


def test_pool_tie_routes_to_first_in_scan_order():
    x = np.array([[[7.0, 7.0], [7.0, 7.0]]])
    pool = MaxPool(2, 2)
    pool.forward(x)
    dx = pool.backward(np.array([[[1.0]]]))
    npt.assert_array_equal(dx, np.array([[[1.0, 0.0], [0.0, 0.0]]]))


def test_pool_window_too_large():
    with pytest.raises(ShapeError):
        MaxPool(3, 1).forward(np.zeros((1, 2, 5)))


# --- lrn ---

def test_lrn_zero_input():
    out = Lrn(2).forward(np.zeros((4, 3, 3)))
    npt.assert_array_equal(out, np.zeros((4, 3, 3)))


def test_lrn_single_value_formula():
    out = Lrn(radius=0, k=1.0, alpha=1.0, beta=1.0).forward(np.ones((1, 1, 1)))
    assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-15)


def test_lrn_alpha_zero_scales_by_k_pow():
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, (3, 4, 4))
    out = Lrn(radius=1, k=2.0, alpha=0.0, beta=0.75).forward(x)
    npt.assert_allclose(out, x * 2.0 ** -0.75, atol=1e-12)


def test_lrn_matches_direct_formula():
    rng = np.random.default_rng(8)
    for _ in range(5):
        x = rng.normal(0, 1, (5, 3, 3))
        radius = int(rng.integers(0, 3))
        k, alpha, beta = 1.5, 0.3, 0.9
        out = Lrn(radius, k, alpha, beta).forward(x)
        npt.assert_allclose(out, lrn_naive(x, radius, k, alpha, beta), atol=1e-12)


def test_lrn_rejects_bad_constants():
    with pytest.raises(ValueError):
        Lrn(radius=1, k=0.0)
    with pytest.raises(ValueError):
        Lrn(radius=1, beta=-1.0)


# --- relu ---

def test_relu_all_negative():
    npt.assert_array_equal(Relu().forward(-np.ones((2, 2))), np.zeros((2, 2)))


def test_relu_sign_cases():
    npt.assert_array_equal(Relu().forward(np.array([-1.0, 0.0, 2.0])),
                           np.array([0.0, 0.0, 2.0]))


def test_relu_gate_gradient():
    relu = Relu()
    relu.forward(np.array([-1.0, 2.0]))
    npt.assert_array_equal(relu.backward(np.array([5.0, 5.0])),
                           np.array([0.0, 5.0]))


def test_relu_zero_subgradient_is_zero():
    relu = Relu()
    relu.forward(np.array([0.0]))
    npt.assert_array_equal(relu.backward(np.array([3.0])), np.array([0.0]))


# --- fully connected ---

def test_fc_identity():
    fc = FullyConnected(np.eye(3), np.zeros(3))
    x = np.array([1.0, -2.0, 0.5])
    npt.assert_array_equal(fc.forward(x), x)


def test_fc_hand_example():
    fc = FullyConnected(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([1.0, 1.0]))
    npt.assert_array_equal(fc.forward(np.array([1.0, 1.0])), np.array([4.0, 8.0]))


def test_fc_bias_passthrough():
    fc = FullyConnected(np.ones((2, 3)), np.array([0.5, -0.5]))
    npt.assert_array_equal(fc.forward(np.zeros(3)), np.array([0.5, -0.5]))


def test_fc_dimension_mismatch():
    with pytest.raises(ShapeError):
        FullyConnected(np.ones((2, 3)), np.zeros(2)).forward(np.zeros(4))


# --- softmax cross-entropy ---

def test_xent_uniform_logits():
    loss, _ = softmax_xent(np.zeros(2), 0)
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_xent_large_logits_stable():
    loss, grad = softmax_xent(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_xent_grad_example():
    _, grad = softmax_xent(np.array([0.0, 0.0]), 1)
    npt.assert_allclose(grad, np.array([0.5, -0.5]), atol=1e-15)


def test_xent_loss_nonneg_grad_sums_zero():
    rng = np.random.default_rng(9)
    for _ in range(20):
        logits = rng.normal(0, 3, 2)
        label = int(rng.integers(0, 2))
        loss, grad = softmax_xent(logits, label)
        assert loss >= 0.0
        assert abs(grad.sum()) < 1e-12


def test_xent_label_out_of_range():
    with pytest.raises(ValueError):
        softmax_xent(np.zeros(2), 2)
    with pytest.raises(ValueError):
        softmax_xent(np.zeros(2), -1)


def test_xent_batch_matches_single():
    rng = np.random.default_rng(10)
    logits = rng.normal(0, 2, (5, 2))
    labels = rng.integers(0, 2, 5)
    losses, grads = softmax_xent_batch(logits, labels)
    for i in range(5):
        loss_i, grad_i = softmax_xent(logits[i], int(labels[i]))
        assert losses[i] == pytest.approx(loss_i, abs=1e-15)
        npt.assert_allclose(grads[i], grad_i, atol=1e-15)
