"""Backward-pass correctness against central finite differences."""

import numpy as np
import pytest

from imn import tensor as T

from oracles import finite_diff_grad, grad_close


def fd_check(build, *arrays, h=1e-5):
    """Compare analytic gradients of a scalar graph with finite differences.

    ``build`` maps the given float64 arrays (wrapped as tensors) to a
    scalar Tensor; every array is checked coordinate by coordinate.
    """
    tensors = [T.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    with T.Tape() as tape:
        loss = build(*tensors)
    T.backward(loss, tape)

    for t in tensors:
        def f(t=t):
            with T.Tape():
                return build(*tensors).item()
        numeric = finite_diff_grad(f, t.data, h=h)
        assert grad_close(t.grad, numeric), \
            f"gradient mismatch for array of shape {t.data.shape}"


class TestBackwardBasics:
    def test_sum_gradient_is_ones(self):
        x = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with T.Tape() as tape:
            loss = T.t_sum(x)
        T.backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3), dtype=np.float32))

    def test_quadratic_gradient_is_x(self):
        data = np.array([1.0, -2.0, 0.5])
        x = T.Tensor(data, requires_grad=True, dtype=np.float64)
        with T.Tape() as tape:
            loss = T.mul(T.t_sum(T.mul(x, x)), 0.5)
        T.backward(loss, tape)
        np.testing.assert_allclose(x.grad, data, rtol=1e-12)

    def test_backward_twice_doubles_gradients(self):
        x = T.Tensor(np.array([3.0, -1.0]), requires_grad=True, dtype=np.float64)
        with T.Tape() as tape:
            loss = T.t_sum(T.mul(x, x))
        T.backward(loss, tape)
        once = x.grad.copy()
        T.backward(loss, tape)
        np.testing.assert_array_equal(x.grad, 2.0 * once)

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor(np.zeros(3), requires_grad=True)
        with T.Tape() as tape:
            y = T.mul(x, 2.0)
        with pytest.raises(T.TensorError, match="scalar"):
            T.backward(y, tape)

    def test_detached_graph_rejected(self):
        x = T.Tensor(np.zeros(3), requires_grad=True)
        with T.Tape() as tape:
            _ = T.mul(x, 2.0)
        loose = T.Tensor(np.asarray(1.0))
        with pytest.raises(T.TensorError, match="detached"):
            T.backward(loose, tape)

    def test_grad_accumulates_across_reuse(self):
        # y = x*x + x  ->  dy/dx = 2x + 1, exercising fan-out accumulation
        x = T.Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
        with T.Tape() as tape:
            loss = T.t_sum(T.add(T.mul(x, x), x))
        T.backward(loss, tape)
        np.testing.assert_allclose(x.grad, [5.0])

    def test_no_recording_outside_tape(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = T.mul(x, 3.0)
        assert y.requires_grad is False

    def test_backward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(36)
        data = rng.normal(size=(2, 3, 4, 8)).astype(np.float32)
        kdata = rng.normal(size=(5, 3, 3, 3)).astype(np.float32)
        grads = []
        for _ in range(2):
            x = T.Tensor(data, requires_grad=True)
            k = T.Tensor(kdata, requires_grad=True)
            with T.Tape() as tape:
                out = T.conv2d(x, k, None, (1, 1))
                loss = T.t_sum(T.mul(T.gelu(out), out))
            T.backward(loss, tape)
            grads.append((x.grad.copy(), k.grad.copy()))
        assert np.array_equal(grads[0][0], grads[1][0])
        assert np.array_equal(grads[0][1], grads[1][1])


class TestOpGradients:
    def test_conv2d(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(2, 2, 4, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        fd_check(lambda xt, kt, bt: T.t_sum(T.mul(c := T.conv2d(xt, kt, bt, (1, 1)), c)),
                 x, k, b)

    def test_conv2d_asymmetric_kernel(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(1, 1, 4, 16))
        k = rng.normal(size=(2, 1, 3, 15))
        b = rng.normal(size=2)
        fd_check(lambda xt, kt, bt: T.t_sum(T.mul(c := T.conv2d(xt, kt, bt, (1, 7)), c)),
                 x, k, b)

    def test_batchnorm_train_mode(self):
        # weight the output with fixed coefficients: a plain sum of squares
        # is almost invariant to x after normalization, which starves the
        # finite-difference comparison of signal
        rng = np.random.default_rng(22)
        x = rng.normal(2.0, 3.0, size=(3, 2, 2, 5))
        gamma = rng.normal(size=2)
        beta = rng.normal(size=2)
        coeff = T.Tensor(rng.normal(size=(3, 2, 2, 5)), dtype=np.float64)

        def build(xt, gt, bt):
            state = T.BatchNormState(2, dtype=np.float64)
            out = T.batchnorm2d(xt, gt, bt, state, training=True)
            return T.t_sum(T.mul(T.mul(out, coeff), out))

        fd_check(build, x, gamma, beta)

    def test_batchnorm_eval_mode(self):
        rng = np.random.default_rng(23)
        state = T.BatchNormState(2, dtype=np.float64)
        state.running_mean = rng.normal(size=2)
        state.running_var = rng.uniform(0.5, 2.0, size=2)
        state.batches = 1
        x = rng.normal(size=(2, 2, 3, 4))
        gamma = rng.normal(size=2)
        beta = rng.normal(size=2)
        fd_check(lambda xt, gt, bt: T.t_sum(T.mul(
            o := T.batchnorm2d(xt, gt, bt, state, training=False), o)), x, gamma, beta)

    def test_gelu(self):
        # clipped: deep-tail gradients fall below the fd noise floor
        x = np.clip(np.random.default_rng(24).normal(size=(3, 7)) * 2, -2.2, 2.2)
        fd_check(lambda xt: T.t_sum(T.mul(g := T.gelu(xt), g)), x)

    def test_maxpool_routes_to_first_max(self):
        x = T.Tensor(np.array([[[[1.0, 3.0, 3.0, 2.0]]]]), requires_grad=True,
                     dtype=np.float64)
        with T.Tape() as tape:
            loss = T.t_sum(T.maxpool2d_w(x, 2))
        T.backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [[[[0.0, 1.0, 1.0, 0.0]]]])

    def test_maxpool_fd(self):
        # distinct values keep the argmax stable under the fd step
        rng = np.random.default_rng(25)
        x = rng.permutation(24).astype(np.float64).reshape(1, 2, 2, 6)
        fd_check(lambda xt: T.t_sum(T.mul(p := T.maxpool2d_w(xt, 2), p)), x)

    def test_upsample_gradient_sums_replicas(self):
        x = T.Tensor(np.array([[[[1.0, 2.0]]]]), requires_grad=True, dtype=np.float64)
        with T.Tape() as tape:
            loss = T.t_sum(T.upsample_nearest_w(x, 3))
        T.backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [[[[3.0, 3.0]]]])

    def test_upsample_fd(self):
        x = np.random.default_rng(26).normal(size=(1, 2, 2, 3))
        fd_check(lambda xt: T.t_sum(T.mul(u := T.upsample_nearest_w(xt, 2), u)), x)

    def test_linear(self):
        rng = np.random.default_rng(27)
        fd_check(lambda xt, wt, bt: T.t_sum(T.mul(o := T.linear(xt, wt, bt), o)),
                 rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2))

    def test_global_avg_pool(self):
        x = np.random.default_rng(28).normal(size=(2, 3, 2, 4))
        fd_check(lambda xt: T.t_sum(T.mul(p := T.global_avg_pool(xt), p)), x)

    def test_softmax(self):
        z = np.random.default_rng(29).normal(size=(3, 4)) * 2
        fd_check(lambda zt: T.t_sum(T.mul(s := T.softmax(zt), s)), z)

    def test_sigmoid(self):
        z = np.random.default_rng(30).normal(size=8) * 3
        fd_check(lambda zt: T.t_sum(T.mul(s := T.sigmoid(zt), s)), z)

    def test_readout(self):
        rng = np.random.default_rng(31)
        w = rng.normal(size=(2, 2, 3, 4))
        x = rng.normal(size=(2, 3, 4))
        fd_check(lambda wt, xt: T.t_sum(T.mul(r := T.readout(wt, xt), r)), w, x)

    def test_cross_entropy(self):
        rng = np.random.default_rng(32)
        z = rng.normal(size=(5, 3)) * 2
        y = rng.integers(0, 3, size=5)
        fd_check(lambda zt: T.cross_entropy_with_logits(zt, y), z)

    def test_bce(self):
        rng = np.random.default_rng(33)
        z = rng.normal(size=6) * 2
        y = rng.integers(0, 2, size=6).astype(np.float64)
        fd_check(lambda zt: T.bce_with_logits(zt, y), z)

    def test_mean_abs(self):
        # keep entries away from the |.| kink so fd is valid
        rng = np.random.default_rng(34)
        x = rng.normal(size=(3, 4))
        x[np.abs(x) < 0.1] += 0.2
        fd_check(lambda xt: T.mean_abs(xt), x)

    def test_reshape(self):
        x = np.random.default_rng(35).normal(size=(2, 6))
        fd_check(lambda xt: T.t_sum(T.mul(r := T.reshape(xt, (3, 4)), r)), x)
