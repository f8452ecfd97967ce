"""Dense network with fake-quantized weights.

Forward passes use Q(W) elementwise on the weight matrices; the stored
(latent) weights are what the optimizer moves. Biases are never quantized.
backward() returns the exact loss gradient with respect to the quantized
weight values together with the per-weight estimator factor evaluated at the
latent weights, so gradients depend on other weights only through their
quantized values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import EstimatorSpec, derivative
from .optim import TrainingDiverged
from .quantizer import QuantizerConfig, quantize

__all__ = [
    "Layer",
    "NetworkState",
    "GradientBundle",
    "he_limit",
    "init_weights",
    "forward",
    "backward",
]


def he_limit(fan_in: int) -> float:
    """Bound of the He-uniform initialization distribution."""
    return math.sqrt(6.0 / fan_in)


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str  # relu | identity
    quantizer: QuantizerConfig | None = None  # None: weights used as stored
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec.ste)

    def quantized_weights(self):
        if self.quantizer is None:
            return self.weights
        return quantize(self.weights, self.quantizer)

    def clone(self):
        return Layer(weights=self.weights.copy(), bias=self.bias.copy(),
                     activation=self.activation, quantizer=self.quantizer,
                     estimator=self.estimator)


@dataclass
class NetworkState:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[0] != b.weights.shape[1]:
                raise ValueError("layer shapes do not chain")

    def clone(self):
        return NetworkState([layer.clone() for layer in self.layers])

    def weight_count(self) -> int:
        return sum(layer.weights.size for layer in self.layers)


@dataclass
class GradientBundle:
    """Exact gradients w.r.t. quantized weights plus the estimator factors at
    the latent weights. Shapes mirror the network."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    estimator_factors: list[np.ndarray]
    loss: float


def init_weights(shapes, seed, quantizers=None, estimators=None) -> NetworkState:
    """He-uniform weights, zero biases, relu on all but the last layer.

    Drawn from NumPy's Philox counter-based generator keyed on seed, so a
    given (seed, shapes) pair is bit-reproducible. quantizers/estimators may
    be a single value shared by every layer or one entry per layer.
    """
    if len(shapes) < 2:
        raise ValueError("need at least input and output widths")
    n_layers = len(shapes) - 1

    def per_layer(x, default):
        if x is None:
            return [default] * n_layers
        if isinstance(x, (list, tuple)):
            if len(x) != n_layers:
                raise ValueError(f"expected {n_layers} per-layer entries")
            return list(x)
        return [x] * n_layers

    quantizers = per_layer(quantizers, None)
    estimators = per_layer(estimators, EstimatorSpec.ste())

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    layers = []
    for i in range(n_layers):
        fan_in, fan_out = shapes[i], shapes[i + 1]
        lim = he_limit(fan_in)
        w = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        layers.append(Layer(
            weights=w,
            bias=np.zeros(fan_out),
            activation="relu" if i < n_layers - 1 else "identity",
            quantizer=quantizers[i],
            estimator=estimators[i],
        ))
    return NetworkState(layers)


def _forward_full(net: NetworkState, x):
    """Returns (activations, pre-activations, logits)."""
    acts = [x]
    zs = []
    a = x
    for layer in net.layers:
        z = a @ layer.quantized_weights().T + layer.bias
        zs.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(a)
    return acts, zs, a


def _softmax_xent(logits, labels):
    """(mean loss, dlogits). Stable log-sum-exp; gradient already / batch."""
    n = logits.shape[0]
    mx = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - mx)
    lse = mx[:, 0] + np.log(ex.sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(n), labels]))
    p = ex / ex.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1.0
    return loss, p / n


def _check_batch(net, x, labels):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[1] != net.layers[0].weights.shape[1]:
        raise ValueError("batch width does not match the first layer")
    if labels.shape != (x.shape[0],):
        raise ValueError("labels must be one integer per sample")
    n_out = net.layers[-1].weights.shape[0]
    if labels.min() < 0 or labels.max() >= n_out:
        raise ValueError("label outside the output range")
    return x, labels.astype(np.int64)


def forward(net: NetworkState, x, labels):
    """(logits, mean softmax cross-entropy loss) on one batch."""
    x, labels = _check_batch(net, x, labels)
    _, _, logits = _forward_full(net, x)
    if not np.all(np.isfinite(logits)):
        raise TrainingDiverged("non-finite activations in forward pass")
    loss, _ = _softmax_xent(logits, labels)
    return logits, loss


def backward(net: NetworkState, x, labels) -> GradientBundle:
    """Backprop through the quantized-weight graph.

    All matrices in the backward pass are the quantized weights, so replacing
    a latent weight by any other value in the same bin leaves every gradient
    bit-identical; only the estimator factors move.
    """
    x, labels = _check_batch(net, x, labels)
    acts, zs, logits = _forward_full(net, x)
    if not np.all(np.isfinite(logits)):
        raise TrainingDiverged("non-finite activations in forward pass")
    loss, dz = _softmax_xent(logits, labels)

    n_layers = len(net.layers)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    factors = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        w_grads[i] = dz.T @ acts[i]
        b_grads[i] = dz.sum(axis=0)
        if layer.quantizer is None:
            factors[i] = np.ones_like(layer.weights)
        else:
            factors[i] = derivative(layer.weights, layer.estimator, layer.quantizer)
        if i > 0:
            da = dz @ layer.quantized_weights()
            dz = da * (zs[i - 1] > 0.0)
    return GradientBundle(weight_grads=w_grads, bias_grads=b_grads,
                          estimator_factors=factors, loss=loss)
