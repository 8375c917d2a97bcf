import numpy as np
import pytest

from capnet import gradcheck, layers
from capnet.gradcheck import (
    TOLERANCE,
    check_layer,
    check_model,
    fd_gradient,
    layer_checks,
    max_rel_error,
    run_all,
)


class TestPrimitives:
    def test_fd_gradient_of_quadratic(self):
        x = np.array([1.0, -2.0, 3.0])
        grad = fd_gradient(lambda v: float((v ** 2).sum()), x.copy())
        assert max_rel_error(grad, 2.0 * x) < 1e-9

    def test_fd_leaves_input_untouched(self):
        x = np.array([0.5, 0.25])
        snapshot = x.copy()
        fd_gradient(lambda v: float(v.sum()), x)
        assert np.array_equal(x, snapshot)

    def test_max_rel_error_zero_for_equal(self):
        a = np.array([1.0, 2.0, 3.0])
        assert max_rel_error(a, a.copy()) == 0.0

    def test_max_rel_error_scale(self):
        assert max_rel_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)


class TestLayerSuite:
    def test_every_layer_passes(self):
        results = layer_checks(seed=0)
        for layer_name, errs in results.items():
            for grad_name, err in errs.items():
                assert err < TOLERANCE, f"{layer_name}/{grad_name}: {err}"

    def test_detects_corrupted_conv_backward(self, monkeypatch):
        original = layers.Conv2D.backward

        def skewed(self, dout):
            dx = original(self, dout)
            self.weights.grad *= 1.01
            return dx

        monkeypatch.setattr(layers.Conv2D, "backward", skewed)
        errs = layer_checks(seed=0)["conv2d"]
        assert errs["conv.weights"] > TOLERANCE

    def test_detects_corrupted_input_gradient(self, monkeypatch):
        original = layers.Dense.backward

        def skewed(self, dout):
            return original(self, dout) * 0.9

        monkeypatch.setattr(layers.Dense, "backward", skewed)
        errs = layer_checks(seed=0)["dense"]
        assert errs["input"] > TOLERANCE


class TestModelCheck:
    def test_end_to_end_passes(self):
        errors = check_model(seed=0)
        assert len(errors) > 20
        for name, err in errors.items():
            assert err < TOLERANCE, f"{name}: {err}"

    def test_covers_every_parameter(self):
        from capnet.gradcheck import CHECK_CHARSET, CHECK_CONFIG
        from capnet.model import build_model
        from capnet.tensor import Rng

        model = build_model(CHECK_CONFIG, CHECK_CHARSET, Rng(0))
        expected = {p.name for p in model.parameters()}
        assert set(check_model(seed=0)) == expected

    def test_run_all_merges_suites(self):
        results = run_all(seed=0)
        assert "model" in results
        assert "conv2d" in results
        worst = max(err for errs in results.values() for err in errs.values())
        assert worst < TOLERANCE
