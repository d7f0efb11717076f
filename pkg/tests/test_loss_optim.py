"""Cross-entropy, dense-weight L2 penalty, and the SGD update."""

import numpy as np
import pytest

from deepquality.nn import (
    DenseLayer,
    l2_penalty,
    sgd_step,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
)
from deepquality.nn.gradcheck import numerical_gradient


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        """Equal logits give loss ln(5)."""
        loss, grad = softmax_cross_entropy(np.zeros(5), 2)
        assert loss == pytest.approx(np.log(5), rel=1e-12)
        assert np.allclose(grad, 0.2 - np.eye(5)[2])

    def test_saturated_correct_class(self):
        """A +30/-30 margin on the true class drives loss and grad to ~0."""
        logits = np.array([30.0, -30.0, -30.0, -30.0, -30.0])
        loss, grad = softmax_cross_entropy(logits, 0)
        assert loss < 1e-10
        assert np.abs(grad).max() < 1e-10

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.standard_normal(5)
        _, grad = softmax_cross_entropy(logits, 3)
        loss_fn = lambda: softmax_cross_entropy(logits, 3)[0]
        num = numerical_gradient(loss_fn, logits, 1e-5)
        np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-8)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="label"):
            softmax_cross_entropy(np.zeros(5), 5)

    def test_large_logits_stable(self):
        """Max-subtraction keeps huge logits finite."""
        loss, grad = softmax_cross_entropy(np.array([1e4, 0.0, 0.0, 0.0, -1e4]), 1)
        assert np.isfinite(loss) and np.isfinite(grad).all()

    def test_softmax_normalized(self, rng):
        for _ in range(50):
            p = softmax(rng.standard_normal(5) * 10.0 ** int(rng.integers(-2, 4)))
            assert (p >= 0).all()
            assert abs(p.sum() - 1.0) < 1e-6

    def test_batch_matches_single(self, rng):
        logits = rng.standard_normal((4, 5))
        labels = np.array([0, 4, 2, 2])
        mean_loss, grad = softmax_cross_entropy_batch(logits, labels)
        singles = [softmax_cross_entropy(logits[i], labels[i]) for i in range(4)]
        assert mean_loss == pytest.approx(np.mean([s[0] for s in singles]))
        assert np.allclose(grad, np.stack([s[1] for s in singles]) / 4)


class TestL2Penalty:
    def test_zero_lambda(self, rng):
        layer = DenseLayer(rng.standard_normal((3, 4)), np.zeros(3))
        value, grads = l2_penalty([layer], 0.0)
        assert value == 0.0
        assert not grads[0].any()

    def test_hand_arithmetic(self):
        """Single weight 3 with lambda 0.5: value 4.5, gradient 3.0."""
        layer = DenseLayer(np.array([[3.0]]), np.zeros(1))
        value, grads = l2_penalty([layer], 0.5)
        assert value == pytest.approx(4.5)
        assert grads[0][0, 0] == pytest.approx(3.0)

    def test_gradient_matches_finite_differences(self, rng):
        layer = DenseLayer(rng.standard_normal((3, 4)), rng.standard_normal(3))
        lam = 0.3
        value_fn = lambda: l2_penalty([layer], lam)[0]
        _, grads = l2_penalty([layer], lam)
        num = numerical_gradient(value_fn, layer.weights, 1e-5)
        np.testing.assert_allclose(grads[0], num, rtol=1e-4, atol=1e-8)

    def test_biases_excluded(self, rng):
        """Only weights enter the penalty; bias never contributes."""
        w = rng.standard_normal((2, 2))
        small = DenseLayer(w, np.zeros(2))
        big = DenseLayer(w.copy(), np.full(2, 100.0))
        assert l2_penalty([small], 1.0)[0] == l2_penalty([big], 1.0)[0]

    def test_negative_lambda_rejected(self, rng):
        with pytest.raises(ValueError, match="lambda"):
            l2_penalty([DenseLayer(rng.standard_normal((2, 2)), np.zeros(2))], -1.0)


class TestSgdStep:
    def test_zero_gradient_no_change(self, rng):
        p = rng.standard_normal(5)
        params = {"w": p.copy()}
        sgd_step(params, {"w": np.zeros(5)}, 0.1)
        assert np.array_equal(params["w"], p)

    def test_hand_arithmetic(self):
        params = {"w": np.array([1.0])}
        sgd_step(params, {"w": np.array([0.5])}, 0.1)
        assert params["w"][0] == pytest.approx(0.95)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            sgd_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, 0.1)

    def test_bad_learning_rate_rejected(self):
        with pytest.raises(ValueError, match="learning_rate"):
            sgd_step({"w": np.zeros(3)}, {"w": np.zeros(3)}, 0.0)

    def test_momentum_accumulates(self):
        params = {"w": np.array([0.0])}
        vel = {"w": np.array([0.0])}
        for _ in range(2):
            sgd_step(params, {"w": np.array([1.0])}, 0.1, vel, momentum=0.5)
        # v1 = -0.1, p1 = -0.1; v2 = -0.15, p2 = -0.25
        assert params["w"][0] == pytest.approx(-0.25)
