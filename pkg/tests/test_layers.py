import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from capnet.errors import DegenerateBatchError, DimensionError, ParameterError
from capnet.gradcheck import check_layer, max_rel_error
from capnet.layers import (
    BatchNorm2d,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2,
    Parameter,
    ReLU,
    Softmax,
)
from capnet.tensor import Rng


def conv_oracle(x, w, b):
    # direct six-loop cross-correlation with zero padding 1
    bs, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((bs, f, h, wd))
    for n in range(bs):
        for k in range(f):
            for i in range(h):
                for j in range(wd):
                    s = 0.0
                    for ci in range(c):
                        for ki in range(3):
                            for kj in range(3):
                                s += xp[n, ci, i + ki, j + kj] * w[k, ci, ki, kj]
                    out[n, k, i, j] = s + b[k]
    return out


class TestConv2D:
    def test_identity_kernel(self):
        conv = Conv2D(1, 1, Rng(0))
        conv.weights.value[...] = 0.0
        conv.weights.value[0, 0, 1, 1] = 1.0
        conv.bias.value[...] = 0.0
        x = np.random.default_rng(1).normal(size=(2, 1, 5, 6))
        assert_allclose(conv.forward(x), x, atol=1e-12)

    def test_all_ones_padding_case(self):
        conv = Conv2D(1, 1, Rng(0))
        conv.weights.value[...] = 1.0
        conv.bias.value[...] = 0.0
        out = conv.forward(np.ones((1, 1, 3, 3)))[0, 0]
        assert out[1, 1] == 9.0
        for corner in (out[0, 0], out[0, 2], out[2, 0], out[2, 2]):
            assert corner == 4.0

    def test_matches_loop_oracle(self):
        conv = Conv2D(2, 3, Rng(5))
        x = np.random.default_rng(2).normal(size=(1, 2, 5, 4))
        expected = conv_oracle(x, conv.weights.value, conv.bias.value)
        assert np.max(np.abs(conv.forward(x) - expected)) < 1e-12

    def test_backward_finite_difference(self):
        conv = Conv2D(2, 3, Rng(5))
        x = np.random.default_rng(3).normal(size=(1, 2, 5, 4))
        errs = check_layer(conv, x)
        assert all(e < 1e-6 for e in errs.values()), errs

    def test_channel_mismatch(self):
        conv = Conv2D(3, 2, Rng(0))
        with pytest.raises(DimensionError):
            conv.forward(np.zeros((1, 2, 4, 4)))

    def test_rank_checked(self):
        with pytest.raises(DimensionError):
            Conv2D(1, 1, Rng(0)).forward(np.zeros((4, 4)))

    def test_gradients_accumulate(self):
        conv = Conv2D(1, 1, Rng(0))
        x = np.ones((1, 1, 4, 4))
        conv.forward(x)
        conv.backward(np.ones((1, 1, 4, 4)))
        g1 = conv.bias.grad.copy()
        conv.forward(x)
        conv.backward(np.ones((1, 1, 4, 4)))
        assert_allclose(conv.bias.grad, 2 * g1)


class TestReLU:
    def test_basic(self):
        assert_array_equal(ReLU().forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_positive_passthrough(self):
        x = np.random.default_rng(0).uniform(0.5, 2.0, size=(3, 4))
        assert_array_equal(ReLU().forward(x), x)

    def test_gradient_zero_at_zero(self):
        relu = ReLU()
        relu.forward(np.array([0.0, 1.0, -1.0]))
        assert_array_equal(relu.backward(np.ones(3)), [0.0, 1.0, 0.0])

    def test_finite_difference_away_from_zero(self):
        x = np.random.default_rng(4).normal(size=(2, 3, 4, 4))
        x[np.abs(x) < 0.05] = 0.1
        errs = check_layer(ReLU(), x)
        assert errs["input"] < 1e-6


class TestMaxPool2:
    def test_single_window(self):
        out = MaxPool2().forward(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 4.0

    def test_floor_drops_odd_edges(self):
        out = MaxPool2().forward(np.arange(25.0).reshape(1, 1, 5, 5))
        assert out.shape == (1, 1, 2, 2)
        assert_array_equal(out[0, 0], [[6.0, 8.0], [16.0, 18.0]])

    def test_small_input_rejected(self):
        with pytest.raises(DimensionError):
            MaxPool2().forward(np.zeros((1, 1, 1, 4)))

    def test_backward_conserves_gradient_mass(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            pool = MaxPool2()
            x = rng.normal(size=(2, 3, 6, 8))
            out = pool.forward(x)
            dout = rng.normal(size=out.shape)
            dx = pool.backward(dout)
            assert_allclose(dx.sum(), dout.sum(), atol=1e-12)

    def test_tie_breaks_to_first_in_window(self):
        pool = MaxPool2()
        pool.forward(np.ones((1, 1, 2, 2)))
        dx = pool.backward(np.array([[[[1.0]]]]))
        assert_array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_finite_difference(self):
        x = np.random.default_rng(7).normal(size=(2, 2, 6, 6))
        x += np.arange(x.size).reshape(x.shape) * 0.01
        assert check_layer(MaxPool2(), x)["input"] < 1e-6


class TestBatchNorm2d:
    def test_normalizes_in_training(self):
        bn = BatchNorm2d(3)
        x = np.random.default_rng(8).normal(5.0, 3.0, size=(8, 3, 4, 4))
        out = bn.forward(x, training=True)
        assert np.max(np.abs(out.mean(axis=(0, 2, 3)))) < 1e-7
        assert np.max(np.abs(out.var(axis=(0, 2, 3)) - 1.0)) < 1e-5

    def test_affine_shift_scale(self):
        bn = BatchNorm2d(1)
        bn.gamma.value[...] = 2.0
        bn.beta.value[...] = 3.0
        # wide input so the epsilon term cannot shave the output variance
        x = np.random.default_rng(9).normal(0.0, 3.0, size=(16, 1, 3, 3))
        out = bn.forward(x, training=True)
        assert abs(out.mean() - 3.0) < 1e-7
        assert abs(out.var() - 4.0) < 1e-5

    def test_running_stats_update_rule(self):
        bn = BatchNorm2d(1, momentum=0.9)
        x = np.random.default_rng(10).normal(2.0, 1.5, size=(8, 1, 4, 4))
        bn.forward(x, training=True)
        assert_allclose(bn.running_mean, 0.9 * 0.0 + 0.1 * x.mean(), atol=1e-12)
        assert_allclose(bn.running_var, 0.9 * 1.0 + 0.1 * x.var(), atol=1e-12)

    def test_inference_uses_running_stats(self):
        bn = BatchNorm2d(1)
        bn.running_mean[...] = 4.0
        bn.running_var[...] = 9.0
        out = bn.forward(np.full((1, 1, 1, 1), 10.0), training=False)
        assert_allclose(out, (10.0 - 4.0) / np.sqrt(9.0 + 1e-5), rtol=1e-9)

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatchError):
            BatchNorm2d(2).forward(np.zeros((1, 2, 4, 4)), training=True)

    def test_bad_momentum(self):
        with pytest.raises(ParameterError):
            BatchNorm2d(1, momentum=1.0)

    def test_finite_difference(self):
        bn = BatchNorm2d(2)
        rng = np.random.default_rng(11)
        bn.gamma.value = rng.normal(size=2) + 1.0
        bn.beta.value = rng.normal(size=2)
        errs = check_layer(bn, rng.normal(size=(4, 2, 3, 3)))
        assert all(e < 1e-5 for e in errs.values()), errs


class TestDense:
    def test_identity_weights(self):
        d = Dense(3, 3, Rng(0))
        d.weights.value = np.eye(3)
        x = np.random.default_rng(12).normal(size=(2, 3))
        assert_allclose(d.forward(x), x, atol=1e-12)

    def test_analytic(self):
        d = Dense(2, 1, Rng(0))
        d.weights.value = np.array([[1.0], [1.0]])
        d.bias.value = np.array([0.5])
        assert_allclose(d.forward(np.array([[1.0, 2.0]])), [[3.5]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Dense(4, 2, Rng(0)).forward(np.zeros((1, 3)))

    def test_finite_difference(self):
        d = Dense(6, 4, Rng(1))
        errs = check_layer(d, np.random.default_rng(13).normal(size=(3, 6)))
        assert all(e < 1e-6 for e in errs.values()), errs


class TestDropout:
    def test_infer_is_identity(self):
        x = np.random.default_rng(14).normal(size=(4, 5))
        assert_array_equal(Dropout(0.5, Rng(0)).forward(x, training=False), x)

    def test_rate_zero_is_identity(self):
        x = np.random.default_rng(15).normal(size=(4, 5))
        assert_array_equal(Dropout(0.0).forward(x, training=True), x)

    def test_rate_one_rejected(self):
        with pytest.raises(ParameterError):
            Dropout(1.0)

    def test_inverted_scaling_preserves_mean(self):
        x = np.ones(1_000_000)
        out = Dropout(0.5, Rng(42)).forward(x, training=True)
        assert abs(out.mean() - 1.0) < 0.01

    def test_backward_uses_same_mask(self):
        drop = Dropout(0.5, Rng(3))
        x = np.ones((10, 10))
        out = drop.forward(x, training=True)
        dx = drop.backward(np.ones((10, 10)))
        assert_array_equal(dx, out)

    def test_finite_difference_with_frozen_mask(self):
        drop = Dropout(0.5, Rng(0))
        x = np.random.default_rng(16).normal(size=(3, 8))
        errs = check_layer(drop, x, reseed=lambda l: setattr(l, "rng", Rng(77)))
        assert errs["input"] < 1e-6


class TestFlatten:
    def test_row_major_order(self):
        x = np.arange(8.0).reshape(2, 1, 2, 2)
        out = Flatten().forward(x)
        assert_array_equal(out, [[0, 1, 2, 3], [4, 5, 6, 7]])

    def test_inverse_pair(self):
        fl = Flatten()
        x = np.random.default_rng(17).normal(size=(3, 2, 4, 5))
        out = fl.forward(x)
        assert_array_equal(fl.backward(out), x)

    def test_element_count_conserved(self):
        rng = np.random.default_rng(18)
        for shape in [(1, 1, 1, 1), (2, 3, 4, 5), (4, 2, 6, 6)]:
            x = rng.normal(size=shape)
            assert Flatten().forward(x).size == x.size


class TestSoftmax:
    def test_symmetry(self):
        assert_allclose(Softmax().forward(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_shift_invariance(self):
        sm = Softmax()
        x = np.random.default_rng(19).normal(size=(4, 6))
        a = sm.forward(x)
        b = sm.forward(x + 123.456)
        assert_allclose(a, b, atol=1e-12)

    def test_large_logits_stable(self):
        out = Softmax().forward(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] > 0.999999

    def test_rows_sum_to_one(self):
        out = Softmax().forward(np.random.default_rng(20).normal(size=(8, 36)))
        assert_allclose(out.sum(axis=1), np.ones(8), atol=1e-6)
        assert np.all((out > 0) & (out < 1))

    def test_k_below_two_rejected(self):
        with pytest.raises(DimensionError):
            Softmax().forward(np.zeros((2, 1)))

    def test_finite_difference(self):
        errs = check_layer(Softmax(), np.random.default_rng(21).normal(size=(4, 5)))
        assert errs["input"] < 1e-6


class TestParameter:
    def test_grad_shape_matches(self):
        p = Parameter("w", np.zeros((3, 4)))
        assert p.grad.shape == p.value.shape

    def test_zero_grad(self):
        p = Parameter("w", np.ones(4))
        p.grad += 2.0
        p.zero_grad()
        assert_array_equal(p.grad, np.zeros(4))


def test_universal_gradient_check():
    from capnet.gradcheck import TOLERANCE, layer_checks

    results = layer_checks(seed=0)
    for layer_name, errs in results.items():
        for entry, err in errs.items():
            assert err < TOLERANCE, f"{layer_name}/{entry}: rel err {err}"
