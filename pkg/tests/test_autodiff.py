"""Numeric core: forward oracles, backward sweep, determinism."""

import numpy as np
import pytest

from mdafusion.autodiff import (
    ShapeError,
    Tape,
    Tensor,
    absval,
    backward,
    concat,
    conv2d,
    cross_entropy,
    embedding,
    matmul,
    maximum,
    maxpool2d,
    relu,
    reshape,
    softmax_rows,
    tmean,
    transpose_last2,
    tsum,
)


def matmul_oracle(a, b):
    """Naive triple-loop matrix product, independent of the library path."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def softmax_oracle(x):
    """Direct exp/sum per row, no stabilization tricks."""
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i])
        out[i] = e / e.sum()
    return out


def cross_entropy_oracle(logits, onehot):
    """Per-row -log p(true class) via explicit log-sum-exp, then mean."""
    total = 0.0
    for i in range(logits.shape[0]):
        z = logits[i]
        lse = np.log(np.sum(np.exp(z - z.max()))) + z.max()
        total += lse - z[np.argmax(onehot[i])]
    return total / logits.shape[0]


class TestMatmul:
    def test_identity(self):
        x = np.array([[3.0, -1.0], [2.5, 7.0]])
        out = matmul(Tensor(np.eye(2)), Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_computed(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[0.0], [1.0]])
        np.testing.assert_array_equal(matmul(a, b).data, [[2.0], [4.0]])

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(got - matmul_oracle(a, b))) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_batched_broadcast_grad(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((4, 3, 2)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with Tape():
            out = tsum(matmul(a, w))
            backward(out, params=[a, w])
        # d(sum(A@W))/dW = sum over batch of A^T @ ones
        expected = sum(a.data[i].T @ np.ones((3, 2)) for i in range(4))
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)


class TestSoftmaxRows:
    def test_uniform_row(self):
        out = softmax_rows(Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_shift_invariance_analytic(self):
        for c in (-50.0, 0.0, 123.4):
            out = softmax_rows(Tensor([[c, c + np.log(2.0)]]))
            np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-12)

    def test_against_exp_sum_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 6))
        got = softmax_rows(Tensor(x)).data
        assert np.max(np.abs(got - softmax_oracle(x))) < 1e-12

    def test_rows_sum_to_one_wide_range(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((8, 5)) * 1e4
        out = softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(8), atol=1e-9)
        assert np.all(out >= 0)


class TestRelu:
    def test_basic(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        np.testing.assert_array_equal(relu(Tensor([-3.0, -0.5])).data, [0.0, 0.0])

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 4))
        once = relu(Tensor(x)).data
        np.testing.assert_array_equal(relu(Tensor(once)).data, once)

    def test_subgradient_at_zero_is_zero(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with Tape():
            backward(tsum(relu(x)), params=[x])
        np.testing.assert_array_equal(x.grad, np.zeros(3))


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((2, 4)))
        y = np.eye(4)[[0, 2]]
        assert abs(cross_entropy(logits, y).item() - np.log(4.0)) < 1e-12

    def test_confident_correct(self):
        logits = np.zeros((1, 3))
        logits[0, 1] = 1000.0
        y = np.eye(3)[[1]]
        assert cross_entropy(Tensor(logits), y).item() < 1e-9

    def test_against_lse_oracle(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((3, 5)) * 3
        y = np.eye(5)[rng.integers(0, 5, size=3)]
        got = cross_entropy(Tensor(logits), y).item()
        assert abs(got - cross_entropy_oracle(logits, y)) < 1e-10

    def test_rejects_non_one_hot(self):
        logits = Tensor(np.zeros((2, 3)))
        bad = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(ValueError, match="one-hot"):
            cross_entropy(logits, bad)

    def test_strictly_positive(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((4, 6))
        y = np.eye(6)[rng.integers(0, 6, size=4)]
        assert cross_entropy(Tensor(logits), y).item() > 0.0


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape():
            backward(tsum(x), params=[x])
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_half_square_gives_identity(self):
        rng = np.random.default_rng(0)
        xv = rng.standard_normal((3, 4))
        x = Tensor(xv, requires_grad=True)
        with Tape():
            loss = tsum(x * x) * 0.5
            backward(loss, params=[x])
        np.testing.assert_allclose(x.grad, xv, atol=1e-12)

    def test_unreachable_parameter_gets_zero(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            grads = backward(tsum(x), params=[x, y])
        np.testing.assert_array_equal(grads[1], np.zeros(3))

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            out = x * 2.0
            with pytest.raises(ValueError, match="scalar"):
                backward(out)

    def test_softmax_grad_rows_sum_zero(self):
        # gradient of any scalar through softmax is orthogonal to constants
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        c = rng.standard_normal((3, 5))
        with Tape():
            backward(tsum(softmax_rows(x) * c), params=[x])
        np.testing.assert_allclose(x.grad.sum(axis=-1), np.zeros(3), atol=1e-12)


class TestShapeOps:
    def test_reshape_roundtrip_grad(self):
        x = Tensor(np.arange(12.0), requires_grad=True)
        with Tape():
            out = reshape(x, (3, 4))
            backward(tsum(out * out), params=[x])
        np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-12)

    def test_transpose(self):
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(transpose_last2(Tensor(x)).data, x.T)

    def test_concat_grad_splits(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        with Tape():
            out = concat([a, b], axis=1)
            backward(tsum(out * 2.0), params=[a, b])
        np.testing.assert_array_equal(a.grad, 2 * np.ones((2, 2)))
        np.testing.assert_array_equal(b.grad, 2 * np.ones((2, 3)))

    def test_mean_axis(self):
        x = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
        with Tape():
            out = tmean(x, axis=1)
            assert out.shape == (2, 4)
            backward(tsum(out), params=[x])
        np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 1 / 3), atol=1e-15)

    def test_maximum_tie_routes_first(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            backward(tsum(maximum(a, b)), params=[a, b])
        np.testing.assert_array_equal(a.grad, np.ones(3))
        np.testing.assert_array_equal(b.grad, np.zeros(3))

    def test_abs_grad_is_sign(self):
        x = Tensor(np.array([-2.0, 0.0, 3.0]), requires_grad=True)
        with Tape():
            backward(tsum(absval(x)), params=[x])
        np.testing.assert_array_equal(x.grad, [-1.0, 0.0, 1.0])


class TestEmbedding:
    def test_lookup_and_scatter(self):
        table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
        ids = np.array([[0, 2], [2, 1]])
        with Tape():
            out = embedding(table, ids)
            assert out.shape == (2, 2, 3)
            backward(tsum(out), params=[table])
        expected = np.array([1.0, 1.0, 2.0, 0.0])  # row usage counts
        np.testing.assert_array_equal(table.grad, expected[:, None] * np.ones((4, 3)))

    def test_out_of_range_rejected(self):
        table = Tensor(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="out of range"):
            embedding(table, np.array([5]))


class TestConvPool:
    def test_conv_against_scipy(self):
        from scipy.signal import correlate2d

        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1).data
        assert out.shape == (2, 4, 7, 6)
        for bi in range(2):
            for co in range(4):
                ref = sum(
                    correlate2d(x[bi, ci], w[co, ci], mode="same")
                    for ci in range(3)
                ) + b[co]
                np.testing.assert_allclose(out[bi, co], ref, atol=1e-10)

    def test_maxpool_values(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = maxpool2d(Tensor(x)).data
        np.testing.assert_array_equal(out[0, 0], [[5.0, 7.0], [13.0, 15.0]])

    def test_maxpool_constant_input_grad_deterministic(self):
        x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        with Tape():
            backward(tsum(maxpool2d(x)), params=[x])
        assert x.grad.sum() == 4.0  # one route per window
        x2 = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        with Tape():
            backward(tsum(maxpool2d(x2)), params=[x2])
        np.testing.assert_array_equal(x.grad, x2.grad)

    def test_maxpool_odd_dims_truncate(self):
        x = np.arange(25.0).reshape(1, 1, 5, 5)
        assert maxpool2d(Tensor(x)).shape == (1, 1, 2, 2)


def test_ops_bit_deterministic():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((6, 6))
    b = rng.standard_normal((6, 6))
    r1 = matmul(Tensor(a), Tensor(b)).data
    r2 = matmul(Tensor(a), Tensor(b)).data
    assert np.array_equal(r1, r2)
    s1 = softmax_rows(Tensor(a)).data
    s2 = softmax_rows(Tensor(a)).data
    assert np.array_equal(s1, s2)


def test_finite_forward_outputs():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((5, 5)) * 1e4
    assert np.all(np.isfinite(softmax_rows(Tensor(x)).data))
    assert np.all(np.isfinite(relu(Tensor(x)).data))
    y = np.eye(5)
    assert np.isfinite(cross_entropy(Tensor(x), y).item())
