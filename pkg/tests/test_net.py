import math

import numpy as np
import pytest

from qatlab.estimator import EstimatorSpec
from qatlab.net import (Layer, NetworkState, backward, forward, he_limit,
                        init_weights)
from qatlab.optim import TrainingDiverged


def make_batch(rng, n, d_in, n_classes):
    return rng.normal(size=(n, d_in)), rng.integers(0, n_classes, size=n)


class TestInit:
    def test_deterministic(self):
        a = init_weights([2, 8, 2], seed=123)
        b = init_weights([2, 8, 2], seed=123)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)

    def test_seed_changes_weights(self):
        a = init_weights([2, 8, 2], seed=1)
        b = init_weights([2, 8, 2], seed=2)
        assert not np.array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_he_bound(self):
        assert he_limit(6) == 1.0
        net = init_weights([6, 64], seed=0)
        w = net.layers[0].weights
        assert np.all(np.abs(w) <= 1.0)
        assert np.max(np.abs(w)) > 0.8  # uniform draw actually fills the range

    def test_biases_zero(self):
        net = init_weights([2, 8, 2], seed=0)
        for layer in net.layers:
            assert not np.any(layer.bias)

    def test_activations(self):
        net = init_weights([2, 8, 8, 2], seed=0)
        assert [l.activation for l in net.layers] == ["relu", "relu", "identity"]

    def test_shape_chain_enforced(self):
        bad = Layer(weights=np.zeros((3, 2)), bias=np.zeros(3), activation="relu")
        out = Layer(weights=np.zeros((2, 4)), bias=np.zeros(2), activation="identity")
        with pytest.raises(ValueError):
            NetworkState([bad, out])


class TestForward:
    def test_identity_layer_passes_input_through(self):
        net = NetworkState([Layer(weights=np.eye(3), bias=np.zeros(3),
                                  activation="identity")])
        x = np.array([[0.3, -0.7, 2.0], [1.0, 0.0, -1.0]])
        logits, _ = forward(net, x, np.array([0, 1]))
        np.testing.assert_array_equal(logits, x)

    def test_zero_weights_give_log2_loss(self):
        net = NetworkState([Layer(weights=np.zeros((2, 3)), bias=np.zeros(2),
                                  activation="identity")])
        _, loss = forward(net, np.ones((5, 3)), np.zeros(5, dtype=int))
        assert loss == pytest.approx(math.log(2.0))

    def test_hand_computed_quantized_logits(self, cfg2bit):
        # Q(0.4)=2/3, Q(-10)=-4/3, Q(0.0)=0, Q(0.3)=0
        net = NetworkState([Layer(weights=np.array([[0.4, -10.0], [0.0, 0.3]]),
                                  bias=np.array([0.1, -0.2]),
                                  activation="identity", quantizer=cfg2bit)])
        logits, _ = forward(net, np.array([[1.0, 2.0]]), np.array([0]))
        np.testing.assert_allclose(
            logits, [[2.0 / 3.0 - 8.0 / 3.0 + 0.1, -0.2]], atol=1e-15)

    def test_batch_width_checked(self):
        net = init_weights([2, 4, 2], seed=0)
        with pytest.raises(ValueError):
            forward(net, np.zeros((3, 5)), np.zeros(3, dtype=int))

    def test_nonfinite_activations_diverge(self):
        net = NetworkState([Layer(weights=np.array([[1e308, 1e308]]),
                                  bias=np.zeros(1), activation="identity")])
        with np.errstate(over="ignore"), pytest.raises(TrainingDiverged):
            forward(net, np.full((1, 2), 1e10), np.zeros(1, dtype=int))


class TestBackward:
    def test_finite_difference_oracle(self, rng):
        # no quantizer: the loss is smooth in the latent weights, so central
        # differences must reproduce the backprop gradient
        net = init_weights([2, 8, 2], seed=5)
        for _ in range(10):
            x, y = make_batch(rng, 16, 2, 2)
            bundle = backward(net, x, y)
            for li, layer in enumerate(net.layers):
                grad = bundle.weight_grads[li]
                idx = (rng.integers(layer.weights.shape[0]),
                       rng.integers(layer.weights.shape[1]))
                h = 1e-6
                keep = layer.weights[idx]
                layer.weights[idx] = keep + h
                _, up = forward(net, x, y)
                layer.weights[idx] = keep - h
                _, down = forward(net, x, y)
                layer.weights[idx] = keep
                fd = (up - down) / (2 * h)
                assert fd == pytest.approx(grad[idx], rel=1e-5, abs=1e-9)

    def test_bias_gradient_finite_difference(self, rng):
        net = init_weights([2, 6, 2], seed=9)
        x, y = make_batch(rng, 8, 2, 2)
        bundle = backward(net, x, y)
        h = 1e-6
        layer = net.layers[1]
        layer.bias[0] += h
        _, up = forward(net, x, y)
        layer.bias[0] -= 2 * h
        _, down = forward(net, x, y)
        layer.bias[0] += h
        assert (up - down) / (2 * h) == pytest.approx(bundle.bias_grads[1][0],
                                                      rel=1e-5, abs=1e-9)

    def test_ste_factors_are_exactly_one(self, cfg2bit, rng):
        net = init_weights([2, 4, 2], seed=3, quantizers=cfg2bit,
                           estimators=EstimatorSpec.ste())
        x, y = make_batch(rng, 4, 2, 2)
        for f in backward(net, x, y).estimator_factors:
            np.testing.assert_array_equal(f, np.ones_like(f))

    def test_gradients_depend_only_on_quantized_weights(self, cfg2bit, rng):
        net = init_weights([2, 8, 2], seed=11, quantizers=cfg2bit,
                           estimators=EstimatorSpec.tanh_htge(2.0))
        x, y = make_batch(rng, 16, 2, 2)
        before = backward(net, x, y)
        # nudge every latent weight toward its bin center: same bin, same Q(w)
        for layer in net.layers:
            q = layer.quantized_weights().copy()
            layer.weights = q + (layer.weights - q) * 0.5
        after = backward(net, x, y)
        for a, b in zip(before.weight_grads, after.weight_grads):
            np.testing.assert_array_equal(a, b)
        # while the estimator factors do move
        assert any(not np.array_equal(a, b) for a, b in
                   zip(before.estimator_factors, after.estimator_factors))

    def test_saturated_batch_has_vanishing_gradient(self):
        net = NetworkState([Layer(weights=np.array([[40.0], [-40.0]]),
                                  bias=np.zeros(2), activation="identity")])
        x = np.ones((4, 1))
        y = np.zeros(4, dtype=int)  # logits [40, -40]: already the right answer
        bundle = backward(net, x, y)
        assert np.max(np.abs(bundle.weight_grads[0])) < 1e-30

    def test_loss_trajectory_deterministic(self, cfg2bit):
        def run():
            rng = np.random.Generator(np.random.Philox(99))
            net = init_weights([2, 8, 2], seed=42, quantizers=cfg2bit,
                               estimators=EstimatorSpec.tanh_htge(2.0))
            losses = []
            for _ in range(20):
                x, y = make_batch(rng, 8, 2, 2)
                bundle = backward(net, x, y)
                for layer, g, f in zip(net.layers, bundle.weight_grads,
                                       bundle.estimator_factors):
                    layer.weights -= 0.05 * g * f
                losses.append(bundle.loss)
            return losses

        assert run() == run()
