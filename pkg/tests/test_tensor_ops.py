"""Forward-path contracts of every tensor operation against naive oracles."""

import numpy as np
import pytest

from imn import tensor as T

from oracles import (
    compensated_mean,
    highprec_batchnorm,
    highprec_bce_with_logits,
    highprec_cross_entropy,
    highprec_softmax,
    naive_conv2d,
    naive_matmul,
    windowed_max,
)


class TestConv2d:
    def test_zero_input_gives_zero_output(self):
        x = T.Tensor(np.zeros((1, 2, 4, 6)))
        k = T.Tensor(np.random.default_rng(0).normal(size=(3, 2, 3, 5)))
        b = T.Tensor(np.zeros(3))
        out = T.conv2d(x, k, b, padding=(1, 2))
        assert out.shape == (1, 3, 4, 6)
        assert np.all(out.data == 0)

    def test_scalar_kernel_scales(self):
        x = T.Tensor([[[[1.0, 3.0], [5.0, 7.0]]]])
        k = T.Tensor(np.full((1, 1, 1, 1), 2.0))
        b = T.Tensor([0.0])
        out = T.conv2d(x, k, b, padding=(0, 0))
        np.testing.assert_array_equal(out.data, [[[[2.0, 6.0], [10.0, 14.0]]]])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(1, 2, 5, 9))
        k = rng.normal(size=(3, 2, 3, 5))
        b = rng.normal(size=3)
        got = T.conv2d(T.Tensor(x, dtype=np.float64), T.Tensor(k, dtype=np.float64),
                       T.Tensor(b, dtype=np.float64), padding=(1, 2))
        want = naive_conv2d(x, k, b, padding=(1, 2))
        np.testing.assert_allclose(got.data, want, atol=1e-10)

    def test_randomized_configurations_match_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 3))
            cin = int(rng.integers(1, 4))
            cout = int(rng.integers(1, 4))
            kh = int(rng.integers(1, 4))
            kw = int(rng.integers(1, 6))
            ph = int(rng.integers(0, 3))
            pw = int(rng.integers(0, 3))
            h = int(rng.integers(max(1, kh - 2 * ph), 6))
            w = int(rng.integers(max(1, kw - 2 * pw), 8))
            if kh > h + 2 * ph or kw > w + 2 * pw:
                continue
            x = rng.normal(size=(n, cin, h, w))
            k = rng.normal(size=(cout, cin, kh, kw))
            b = rng.normal(size=cout)
            got = T.conv2d(T.Tensor(x, dtype=np.float64), T.Tensor(k, dtype=np.float64),
                           T.Tensor(b, dtype=np.float64), padding=(ph, pw))
            want = naive_conv2d(x, k, b, padding=(ph, pw))
            np.testing.assert_allclose(got.data, want, atol=1e-6)

    def test_channel_mismatch_raises(self):
        x = T.Tensor(np.zeros((1, 2, 4, 4)))
        k = T.Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(T.TensorError, match="channels"):
            T.conv2d(x, k, None, padding=(1, 1))

    def test_oversized_kernel_raises(self):
        x = T.Tensor(np.zeros((1, 1, 2, 2)))
        k = T.Tensor(np.zeros((1, 1, 5, 5)))
        with pytest.raises(T.TensorError, match="larger"):
            T.conv2d(x, k, None, padding=(0, 0))


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(1)
        x = T.Tensor(rng.normal(3.0, 2.5, size=(4, 3, 2, 8)))
        state = T.BatchNormState(3)
        out = T.batchnorm2d(x, T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), state, training=True)
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        np.testing.assert_allclose(mean, 0.0, atol=1e-5)
        np.testing.assert_allclose(var, 1.0, atol=1e-4)

    def test_affine_collapse(self):
        x = T.Tensor(np.random.default_rng(2).normal(size=(2, 2, 3, 4)))
        state = T.BatchNormState(2)
        out = T.batchnorm2d(x, T.Tensor(np.zeros(2)), T.Tensor(np.full(2, 5.0)), state, training=True)
        np.testing.assert_array_equal(out.data, np.full(out.shape, 5.0, dtype=np.float32))

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(1.5, 4.0, size=(3, 4, 2, 6))
        gamma = rng.normal(size=4)
        beta = rng.normal(size=4)
        state = T.BatchNormState(4, dtype=np.float64)
        got = T.batchnorm2d(T.Tensor(x, dtype=np.float64), T.Tensor(gamma, dtype=np.float64),
                            T.Tensor(beta, dtype=np.float64), state, training=True)
        want = highprec_batchnorm(x, gamma, beta)
        assert np.max(np.abs(got.data - want)) < 1e-5

    def test_eval_before_stats_raises(self):
        x = T.Tensor(np.zeros((1, 2, 2, 2)))
        state = T.BatchNormState(2)
        with pytest.raises(T.TensorError, match="running statistics"):
            T.batchnorm2d(x, T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)), state, training=False)

    def test_eval_uses_running_stats(self):
        rng = np.random.default_rng(4)
        gamma, beta = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
        state = T.BatchNormState(2)
        for _ in range(50):
            T.batchnorm2d(T.Tensor(rng.normal(2.0, 3.0, size=(8, 2, 2, 16))), gamma, beta,
                          state, training=True)
        assert state.batches == 50
        x = rng.normal(2.0, 3.0, size=(1, 2, 2, 16))
        out = T.batchnorm2d(T.Tensor(x), gamma, beta, state, training=False)
        expect = (x - state.running_mean[None, :, None, None]) / np.sqrt(
            state.running_var[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(out.data, expect, atol=1e-5)


class TestGelu:
    def test_zero(self):
        assert T.gelu(T.Tensor([0.0])).data[0] == 0.0

    def test_unit_value(self):
        got = T.gelu(T.Tensor([1.0], dtype=np.float64)).data[0]
        assert abs(got - 0.8413447460685429) < 1e-5

    def test_asymptotics(self):
        lo = T.gelu(T.Tensor([-20.0], dtype=np.float64)).data[0]
        hi = T.gelu(T.Tensor([20.0], dtype=np.float64)).data[0]
        assert abs(lo) < 1e-8
        assert abs(hi - 20.0) < 1e-6


class TestMaxPool:
    def test_pairwise_max(self):
        x = T.Tensor(np.array([1.0, 5.0, 3.0, 2.0]).reshape(1, 1, 1, 4))
        out = T.maxpool2d_w(x, 2)
        np.testing.assert_array_equal(out.data.ravel(), [5.0, 3.0])

    def test_monotone_row_keeps_every_second(self):
        x = T.Tensor(np.arange(12.0).reshape(1, 1, 1, 12))
        out = T.maxpool2d_w(x, 2)
        np.testing.assert_array_equal(out.data.ravel(), np.arange(1.0, 12.0, 2.0))

    def test_matches_window_scan_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            pool = int(rng.integers(1, 5))
            w = pool * int(rng.integers(1, 6))
            x = rng.normal(size=(int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                                 int(rng.integers(1, 4)), w))
            got = T.maxpool2d_w(T.Tensor(x, dtype=np.float64), pool)
            np.testing.assert_array_equal(got.data, windowed_max(x, pool))

    def test_indivisible_width_raises(self):
        with pytest.raises(T.TensorError, match="divisible"):
            T.maxpool2d_w(T.Tensor(np.zeros((1, 1, 1, 5))), 2)


class TestUpsample:
    def test_replication(self):
        x = T.Tensor(np.array([1.0, 2.0]).reshape(1, 1, 1, 2))
        out = T.upsample_nearest_w(x, 2)
        np.testing.assert_array_equal(out.data.ravel(), [1.0, 1.0, 2.0, 2.0])

    def test_factor_one_is_identity(self):
        x = np.random.default_rng(6).normal(size=(2, 3, 2, 5))
        out = T.upsample_nearest_w(T.Tensor(x, dtype=np.float64), 1)
        np.testing.assert_array_equal(out.data, x)

    def test_matches_repeat_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            f = int(rng.integers(1, 5))
            x = rng.normal(size=(1, int(rng.integers(1, 3)), int(rng.integers(1, 3)),
                                 int(rng.integers(1, 6))))
            got = T.upsample_nearest_w(T.Tensor(x, dtype=np.float64), f)
            want = np.stack([x[..., i // f] for i in range(x.shape[3] * f)], axis=-1)
            np.testing.assert_array_equal(got.data, want)


class TestLinear:
    def test_identity_weight(self):
        x = np.random.default_rng(9).normal(size=(3, 4))
        out = T.linear(T.Tensor(x, dtype=np.float64), T.Tensor(np.eye(4), dtype=np.float64),
                       T.Tensor(np.zeros(4), dtype=np.float64))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weight_gives_bias(self):
        b = np.array([2.0, -1.0])
        out = T.linear(T.Tensor(np.random.default_rng(10).normal(size=(5, 3)), dtype=np.float64),
                       T.Tensor(np.zeros((3, 2)), dtype=np.float64), T.Tensor(b, dtype=np.float64))
        np.testing.assert_array_equal(out.data, np.tile(b, (5, 1)))

    def test_matches_naive_matmul(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 2))
        b = rng.normal(size=2)
        got = T.linear(T.Tensor(x, dtype=np.float64), T.Tensor(w, dtype=np.float64),
                       T.Tensor(b, dtype=np.float64))
        np.testing.assert_allclose(got.data, naive_matmul(x, w, b), rtol=1e-12)

    def test_inner_dim_mismatch_raises(self):
        with pytest.raises(T.TensorError, match="inner dims"):
            T.linear(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2))),
                     T.Tensor(np.zeros(2)))


class TestGlobalAvgPool:
    def test_constant_tensor(self):
        x = T.Tensor(np.full((2, 3, 4, 5), 7.25))
        out = T.global_avg_pool(x)
        np.testing.assert_array_equal(out.data, np.full((2, 3), 7.25, dtype=np.float32))

    def test_small_example(self):
        x = T.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert T.global_avg_pool(x).data[0, 0] == 2.5

    def test_matches_compensated_sum_oracle(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 3, 4, 7))
        got = T.global_avg_pool(T.Tensor(x, dtype=np.float64)).data
        for ni in range(2):
            for ci in range(3):
                assert abs(got[ni, ci] - compensated_mean(x[ni, ci])) < 1e-7


class TestSoftmaxSigmoid:
    def test_uniform_logits(self):
        out = T.softmax(T.Tensor([[3.0, 3.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_extreme_logits_no_overflow(self):
        out = T.softmax(T.Tensor([[1000.0, 0.0]], dtype=np.float64))
        assert np.isfinite(out.data).all()
        assert out.data[0, 0] > 1 - 1e-12
        assert out.data[0, 1] < 1e-12

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(13)
        z = rng.normal(size=(6, 5)) * 3
        got = T.softmax(T.Tensor(z, dtype=np.float64)).data
        np.testing.assert_allclose(got, highprec_softmax(z), atol=1e-7)

    def test_rows_sum_to_one_for_large_magnitudes(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            z = rng.uniform(-1e3, 1e3, size=(4, 6))
            s = T.softmax(T.Tensor(z, dtype=np.float64)).data
            np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)

    def test_sigmoid_identities(self):
        assert T.stable_sigmoid(np.array(0.0)) == 0.5
        zs = np.random.default_rng(15).normal(scale=5.0, size=64)
        np.testing.assert_allclose(T.stable_sigmoid(zs) + T.stable_sigmoid(-zs), 1.0, atol=1e-12)

    def test_sigmoid_overflow_guard(self):
        lo, hi = T.stable_sigmoid(np.array([-710.0, 710.0]))
        assert np.isfinite([lo, hi]).all()
        assert lo < 1e-300 and hi == 1.0


class TestReadout:
    def test_matches_einsum_free_oracle(self):
        rng = np.random.default_rng(16)
        w = rng.normal(size=(2, 3, 4, 5))
        x = rng.normal(size=(2, 4, 5))
        got = T.readout(T.Tensor(w, dtype=np.float64), T.Tensor(x, dtype=np.float64)).data
        want = np.zeros((2, 3))
        for n in range(2):
            for k in range(3):
                want[n, k] = sum(w[n, k, c, t] * x[n, c, t]
                                 for c in range(4) for t in range(5))
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(T.TensorError, match="readout"):
            T.readout(T.Tensor(np.zeros((1, 2, 3, 4))), T.Tensor(np.zeros((1, 3, 5))))


class TestLosses:
    def test_uniform_ce_is_ln2(self):
        logits = T.Tensor(np.zeros((4, 2)))
        loss = T.cross_entropy_with_logits(logits, np.array([0, 1, 0, 1]))
        assert abs(loss.item() - 0.6931471805599453) < 1e-6

    def test_ce_matches_oracle(self):
        rng = np.random.default_rng(17)
        z = rng.normal(size=(8, 3)) * 2
        y = rng.integers(0, 3, size=8)
        loss = T.cross_entropy_with_logits(T.Tensor(z, dtype=np.float64), y)
        assert abs(loss.item() - highprec_cross_entropy(z, y)) < 1e-6

    def test_ce_target_range_checked(self):
        with pytest.raises(T.TensorError, match="targets"):
            T.cross_entropy_with_logits(T.Tensor(np.zeros((2, 2))), np.array([0, 2]))

    def test_bce_at_zero_logit(self):
        loss = T.bce_with_logits(T.Tensor([0.0]), np.array([1.0]))
        assert abs(loss.item() - 0.6931471805599453) < 1e-6

    def test_bce_stability_identities(self):
        hit = T.bce_with_logits(T.Tensor([50.0], dtype=np.float64), np.array([1.0]))
        miss = T.bce_with_logits(T.Tensor([-50.0], dtype=np.float64), np.array([1.0]))
        assert hit.item() < 1e-6
        assert abs(miss.item() - 50.0) < 1e-6

    def test_bce_matches_oracle(self):
        rng = np.random.default_rng(18)
        z = rng.normal(size=16) * 4
        y = rng.integers(0, 2, size=16).astype(np.float64)
        loss = T.bce_with_logits(T.Tensor(z, dtype=np.float64), y)
        assert abs(loss.item() - highprec_bce_with_logits(z, y)) < 1e-6

    def test_bce_rejects_soft_targets(self):
        with pytest.raises(T.TensorError, match="0 or 1"):
            T.bce_with_logits(T.Tensor([0.0]), np.array([0.5]))


class TestInvariants:
    def test_tensor_shape_data_agree(self):
        t = T.Tensor(np.zeros((3, 4)))
        assert np.prod(t.shape) == t.data.size

    def test_finite_guard(self):
        t = T.Tensor([np.nan])
        with pytest.raises(T.TensorError, match="after conv1"):
            T.check_finite(t, "conv1")

    def test_forward_determinism(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(2, 3, 4, 8)).astype(np.float32)
        k = rng.normal(size=(5, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=5).astype(np.float32)
        a = T.conv2d(T.Tensor(x), T.Tensor(k), T.Tensor(b), padding=(1, 1)).data
        c = T.conv2d(T.Tensor(x), T.Tensor(k), T.Tensor(b), padding=(1, 1)).data
        assert np.array_equal(a, c)
