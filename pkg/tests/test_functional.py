import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diqa.nn import functional as F


def conv_oracle(x, w, b, stride, pad):
    """Direct quadruple-loop cross-correlation with zero padding."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, oh, ow))
    for bi in range(n):
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bi, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    y[bi, oc, i, j] = (patch * w[oc]).sum() + (b[oc] if b is not None else 0.0)
    return y


def random_conv_config(rng):
    k = int(rng.integers(1, 6))
    stride = int(rng.integers(1, 4))
    pad = int(rng.integers(0, 4))
    size = int(rng.integers(max(1, k - 2 * pad), 12))
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), size, size)
    return shape, (int(rng.integers(1, 4)), shape[1], k, k), stride, pad


def test_conv_matches_loop_oracle_on_100_configs():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        xs, ws, stride, pad = random_conv_config(rng)
        x, w, b = rng.normal(size=xs), rng.normal(size=ws), rng.normal(size=ws[0])
        y = F.conv2d(x, w, b, stride, pad)
        ref = conv_oracle(x, w, b, stride, pad)
        assert y.shape == ref.shape
        worst = max(worst, np.abs(y - ref).max())
    assert worst < 1e-6


def test_conv_identity_kernel():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y = F.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(y, x)


def test_conv_all_ones():
    y = F.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 2, 2)), np.zeros(1))
    assert y.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(y, 4.0)


def test_convnet_stage_sizes_at_512():
    sizes = [512]
    for k, p in ((10, 4), (7, 3), (3, 1), (3, 1)):
        sizes.append(F.conv_output_size(sizes[-1], k, 2, p))
    assert sizes == [512, 256, 128, 64, 32]


def test_conv_bias_free_and_float32():
    x = np.ones((1, 2, 4, 4), dtype=np.float32)
    y = F.conv2d(x, np.ones((3, 2, 3, 3), dtype=np.float32), None, 1, 1)
    assert y.dtype == np.float32
    assert y[0, 0, 1, 1] == 18.0 and y[0, 0, 0, 0] == 8.0


@pytest.mark.parametrize("xs, ws", [((1, 2, 5, 5), (1, 3, 3, 3)), ((1, 1, 2, 2), (1, 1, 3, 3)), ((1, 1, 5), (1, 1, 3, 3))])
def test_conv_shape_errors_name_both_shapes(xs, ws):
    with pytest.raises(F.ShapeError) as err:
        F.conv2d(np.zeros(xs), np.zeros(ws))
    assert str(xs) in str(err.value) and str(ws) in str(err.value)


def test_conv_backward_skips_input_gradient():
    rng = np.random.default_rng(1)
    _, cache = F.conv2d_forward(rng.normal(size=(2, 1, 8, 8)), rng.normal(size=(3, 1, 3, 3)), np.zeros(3), 2, 1)
    dy = rng.normal(size=(2, 3, 4, 4))
    dx, dw, db = F.conv2d_backward(dy, cache, need_dx=False)
    full = F.conv2d_backward(dy, cache)
    assert dx is None
    np.testing.assert_array_equal(dw, full[1])
    np.testing.assert_array_equal(db, full[2])


def test_relu_examples(rng):
    np.testing.assert_array_equal(F.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    pos = np.abs(rng.normal(size=(2, 3, 4, 4)))
    np.testing.assert_array_equal(F.relu(pos), pos)
    x = rng.normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(F.relu(F.relu(x)), F.relu(x))


class TestBatchnorm:
    def test_train_mode_normalizes(self, rng):
        x = rng.normal(3.0, 2.0, size=(4, 3, 4, 4))
        c = 3
        y, _, _ = F.batchnorm_forward(x, np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), train=True)
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-6
        assert np.abs(y.var(axis=(0, 2, 3)) - 1).max() < 1e-5

    def test_gamma_zero_collapses_to_beta(self, rng):
        x = rng.normal(size=(2, 2, 3, 3))
        y, _, _ = F.batchnorm_forward(x, np.zeros(2), np.full(2, 0.7), np.zeros(2), np.ones(2), train=True)
        np.testing.assert_allclose(y, 0.7, atol=1e-12)

    def test_inference_with_unit_stats(self, rng):
        x = rng.normal(size=(2, 2, 3, 3))
        y, cache, stats = F.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), train=False)
        np.testing.assert_allclose(y, x / math.sqrt(1 + 1e-5), rtol=1e-12)
        assert cache is None

    def test_inference_leaves_running_stats_alone(self, rng):
        rm, rv = np.array([0.1, 0.2]), np.array([1.5, 0.5])
        _, _, (m, v) = F.batchnorm_forward(rng.normal(size=(2, 2, 3, 3)), np.ones(2), np.zeros(2), rm, rv, train=False)
        assert m is rm and v is rv
        np.testing.assert_array_equal(rm, [0.1, 0.2])

    def test_running_stats_update(self, rng):
        x = rng.normal(size=(2, 1, 2, 2))
        _, _, (m, v) = F.batchnorm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), train=True)
        assert m[0] == pytest.approx(0.1 * x.mean())
        assert v[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1))

    def test_single_element_population_rejected(self):
        with pytest.raises(ValueError):
            F.batchnorm_forward(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), train=True)

    def test_large_population_statistics(self, rng):
        x = rng.normal(-4.0, 9.0, size=(4, 5, 4, 4))  # population 64 per channel
        _, (xhat, _, _), _ = F.batchnorm_forward(x, np.ones(5), np.zeros(5), np.zeros(5), np.ones(5), train=True)
        assert np.abs(xhat.mean(axis=(0, 2, 3))).max() < 1e-6
        assert np.abs(xhat.var(axis=(0, 2, 3)) - 1).max() < 1e-5


class TestDense:
    def test_bias_only(self):
        y = F.dense(np.ones((3, 4)), np.zeros((2, 4)), np.array([0.3, -0.3]))
        np.testing.assert_array_equal(y, [[0.3, -0.3]] * 3)

    def test_identity(self):
        np.testing.assert_array_equal(F.dense(np.array([[5.0, 7.0]]), np.eye(2), np.zeros(2)), [[5, 7]])

    def test_hand_product(self):
        np.testing.assert_array_equal(F.dense(np.ones((1, 2)), np.array([[1.0, 2], [3, 4]]), np.zeros(2)), [[3, 7]])

    def test_mismatch(self):
        with pytest.raises(F.ShapeError):
            F.dense(np.ones((1, 3)), np.ones((2, 4)), np.zeros(2))


class TestSoftmaxCrossEntropy:
    @pytest.mark.parametrize("k", [2, 3])
    def test_uniform_logits(self, k):
        loss, probs, _ = F.softmax_cross_entropy(np.zeros((4, k)), np.zeros(4, dtype=int))
        assert loss == pytest.approx(math.log(k), abs=1e-12)
        np.testing.assert_allclose(probs, 1 / k)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(2, 5), st.integers(0, 2**32 - 1), st.floats(0.1, 50))
    def test_row_identities(self, n, k, seed, scale):
        r = np.random.default_rng(seed)
        logits = r.normal(size=(n, k)) * scale
        labels = r.integers(0, k, size=n)
        _, probs, grad = F.softmax_cross_entropy(logits, labels)
        assert np.abs(probs.sum(axis=1) - 1).max() < 1e-9
        assert np.abs(grad.sum(axis=1)).max() < 1e-9

    def test_stable_for_huge_logits(self):
        loss, probs, _ = F.softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([0]))
        assert loss == 0.0 and np.isfinite(probs).all()

    @pytest.mark.parametrize("labels", [[0, 2], [-1, 0]])
    def test_label_range(self, labels):
        with pytest.raises(ValueError):
            F.softmax_cross_entropy(np.zeros((2, 2)), np.array(labels))


def test_global_avg_pool_backward(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    dy = rng.normal(size=(2, 3))
    dx = F.global_avg_pool_backward(dy, x.shape)
    # <dy, pool(x)> is linear in x, so its gradient is the adjoint
    assert np.sum(dy * F.global_avg_pool(x)) == pytest.approx(np.sum(dx * x))
