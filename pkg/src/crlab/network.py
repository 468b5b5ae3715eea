"""Small prediction model: MLP feature extractor plus a bias-free linear head.

All arithmetic is float64 and gradients are computed by hand in reverse mode,
so every objective built on top of this module can be checked against central
finite differences.  The feature layer is linear (no activation), which lets
feature values be negative and keeps the per-unit logit contributions
``features[u] * head[u, y]`` expressive.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np


class LayerParams(NamedTuple):
    weights: np.ndarray  # [fan_in, fan_out]
    bias: np.ndarray  # [fan_out]


# name -> (function, derivative expressed in terms of the function's output)
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda out: 1.0 - out**2),
}


@dataclass(frozen=True)
class ModelParams:
    """Extractor layers (with biases) and the head matrix (no bias)."""

    layers: tuple[LayerParams, ...]
    head: np.ndarray  # [num_feature_units, num_classes]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; known: {sorted(ACTIVATIONS)}")
        if not self.layers:
            raise ValueError("extractor needs at least one layer")
        fan_in = self.layers[0].weights.shape[0]
        for i, layer in enumerate(self.layers):
            w, b = layer
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
            if w.shape[0] != fan_in:
                raise ValueError(f"layer {i} expects fan-in {w.shape[0]}, previous produced {fan_in}")
            fan_in = w.shape[1]
        if self.head.ndim != 2 or self.head.shape[0] != fan_in:
            raise ValueError(
                f"head shape {self.head.shape} does not chain from feature width {fan_in}"
            )

    @property
    def obs_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def num_feature_units(self) -> int:
        return self.head.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head.shape[1]


@dataclass(frozen=True)
class ParamGradients:
    layers: tuple[LayerParams, ...]
    head: np.ndarray


@dataclass(frozen=True)
class ForwardTrace:
    """Everything the backward pass needs, kept at the input's dimensionality."""

    observations: np.ndarray
    hidden: tuple[np.ndarray, ...]  # post-activation outputs of the activated layers
    features: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_vjp(probabilities: np.ndarray, d_probabilities: np.ndarray) -> np.ndarray:
    """Pull a gradient on softmax outputs back to a gradient on logits."""
    inner = (d_probabilities * probabilities).sum(axis=-1, keepdims=True)
    return probabilities * (d_probabilities - inner)


def forward(params: ModelParams, observations: np.ndarray) -> ForwardTrace:
    """Run the model on one observation (1-D) or a batch (2-D)."""
    x = np.asarray(observations, dtype=np.float64)
    single = x.ndim == 1
    batch = np.atleast_2d(x)
    if batch.shape[1] != params.obs_dim:
        raise ValueError(f"observation width {batch.shape[1]} != obs_dim {params.obs_dim}")
    act, _ = ACTIVATIONS[params.activation]
    hidden: list[np.ndarray] = []
    a = batch
    for layer in params.layers[:-1]:
        a = act(a @ layer.weights + layer.bias)
        hidden.append(a)
    last = params.layers[-1]
    features = a @ last.weights + last.bias
    logits = features @ params.head
    probabilities = softmax(logits)
    if single:
        return ForwardTrace(
            x, tuple(h[0] for h in hidden), features[0], logits[0], probabilities[0]
        )
    return ForwardTrace(batch, tuple(hidden), features, logits, probabilities)


def predict(params: ModelParams, observations: np.ndarray):
    """Most probable class; ties resolve to the lowest index."""
    trace = forward(params, observations)
    labels = np.argmax(trace.probabilities, axis=-1)
    return int(labels) if np.isscalar(labels) or labels.ndim == 0 else labels


def backward(
    params: ModelParams,
    trace: ForwardTrace,
    d_logits: np.ndarray | None = None,
    d_features: np.ndarray | None = None,
    d_probabilities: np.ndarray | None = None,
) -> ParamGradients:
    """Exact parameter gradients for upstreams on logits, features, or probabilities.

    Upstream arrays must match the trace's shapes; contributions are summed
    over the batch (callers bake any 1/n reduction into the upstream).
    """
    x = np.atleast_2d(trace.observations)
    features = np.atleast_2d(trace.features)
    probabilities = np.atleast_2d(trace.probabilities)
    hidden = tuple(np.atleast_2d(h) for h in trace.hidden)
    n, c = probabilities.shape

    dz = np.zeros((n, c))
    if d_logits is not None:
        dz = dz + np.atleast_2d(np.asarray(d_logits, dtype=np.float64))
    if d_probabilities is not None:
        dz = dz + softmax_vjp(probabilities, np.atleast_2d(np.asarray(d_probabilities, dtype=np.float64)))
    d_head = features.T @ dz

    df = dz @ params.head.T
    if d_features is not None:
        df = df + np.atleast_2d(np.asarray(d_features, dtype=np.float64))

    _, act_deriv = ACTIVATIONS[params.activation]
    layer_inputs = (x,) + hidden  # input seen by each extractor layer
    layer_grads: list[LayerParams] = [None] * len(params.layers)  # type: ignore[list-item]

    upstream = df  # gradient on the last (linear) layer's output
    for i in range(len(params.layers) - 1, -1, -1):
        a_in = layer_inputs[i]
        d_pre = upstream if i == len(params.layers) - 1 else upstream * act_deriv(hidden[i])
        layer_grads[i] = LayerParams(a_in.T @ d_pre, d_pre.sum(axis=0))
        upstream = d_pre @ params.layers[i].weights.T

    return ParamGradients(layers=tuple(layer_grads), head=d_head)


def init_params(
    obs_dim: int,
    hidden_widths: Sequence[int],
    feature_units: int,
    num_classes: int,
    scale: float,
    rng: np.random.Generator,
    activation: str = "tanh",
) -> ModelParams:
    """Weights ~ Normal(0, scale^2), biases zero; draw order is fixed per seed."""
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale!r}")
    widths = [int(obs_dim)] + [int(w) for w in hidden_widths] + [int(feature_units)]
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        layers.append(LayerParams(scale * rng.standard_normal((fan_in, fan_out)), np.zeros(fan_out)))
    head = scale * rng.standard_normal((feature_units, num_classes))
    return ModelParams(layers=tuple(layers), head=head, activation=activation)


def sgd_step(params: ModelParams, grads: ParamGradients, learning_rate: float) -> ModelParams:
    """Elementwise descent step: params minus learning_rate times grads."""
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be > 0, got {learning_rate!r}")
    if len(grads.layers) != len(params.layers) or grads.head.shape != params.head.shape:
        raise ValueError("gradient structure does not match parameter structure")
    layers = []
    for p, g in zip(params.layers, grads.layers):
        if p.weights.shape != g.weights.shape or p.bias.shape != g.bias.shape:
            raise ValueError("gradient layer shapes do not match parameter layer shapes")
        layers.append(LayerParams(p.weights - learning_rate * g.weights, p.bias - learning_rate * g.bias))
    return ModelParams(
        layers=tuple(layers), head=params.head - learning_rate * grads.head, activation=params.activation
    )


def zero_gradients(params: ModelParams) -> ParamGradients:
    return ParamGradients(
        layers=tuple(LayerParams(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers),
        head=np.zeros_like(params.head),
    )


def add_gradients(a: ParamGradients, b: ParamGradients) -> ParamGradients:
    return ParamGradients(
        layers=tuple(
            LayerParams(la.weights + lb.weights, la.bias + lb.bias)
            for la, lb in zip(a.layers, b.layers)
        ),
        head=a.head + b.head,
    )


def scale_gradients(g: ParamGradients, factor: float) -> ParamGradients:
    return ParamGradients(
        layers=tuple(LayerParams(factor * w, factor * b) for w, b in g.layers),
        head=factor * g.head,
    )


def params_to_vector(params: ModelParams) -> np.ndarray:
    pieces = []
    for w, b in params.layers:
        pieces.append(w.ravel())
        pieces.append(b.ravel())
    pieces.append(params.head.ravel())
    return np.concatenate(pieces)


def gradients_to_vector(grads: ParamGradients) -> np.ndarray:
    pieces = []
    for w, b in grads.layers:
        pieces.append(w.ravel())
        pieces.append(b.ravel())
    pieces.append(grads.head.ravel())
    return np.concatenate(pieces)


def vector_to_params(vector: np.ndarray, template: ModelParams) -> ModelParams:
    vector = np.asarray(vector, dtype=np.float64)
    layers = []
    offset = 0
    for w, b in template.layers:
        layers.append(
            LayerParams(
                vector[offset : offset + w.size].reshape(w.shape),
                vector[offset + w.size : offset + w.size + b.size].copy(),
            )
        )
        offset += w.size + b.size
    head = vector[offset : offset + template.head.size].reshape(template.head.shape)
    offset += template.head.size
    if offset != vector.size:
        raise ValueError(f"vector length {vector.size} does not match template ({offset})")
    return ModelParams(layers=tuple(layers), head=head, activation=template.activation)


__all__ = [
    "ACTIVATIONS",
    "ForwardTrace",
    "LayerParams",
    "ModelParams",
    "ParamGradients",
    "add_gradients",
    "backward",
    "forward",
    "gradients_to_vector",
    "init_params",
    "log_softmax",
    "params_to_vector",
    "predict",
    "scale_gradients",
    "sgd_step",
    "softmax",
    "softmax_vjp",
    "vector_to_params",
    "zero_gradients",
]
