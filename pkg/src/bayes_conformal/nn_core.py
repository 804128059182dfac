"""Fully-connected classifier with manual backpropagation.

The network is the shared observation model ``p(y | x, w)`` for every
inference engine in the package. Weights live in a single flat float64
vector; :class:`NetworkSpec` knows how to slice it into per-layer
``(W, b)`` pairs, with ``W`` stored row-major as ``(fan_in, fan_out)``
followed by the bias ``b`` of length ``fan_out``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("layer_widths needs an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1, got {widths}")
        if widths[-1] < 2:
            raise ValueError("need at least 2 output classes")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_params(self) -> int:
        return sum(
            fan_in * fan_out + fan_out
            for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:])
        )

    def layer_slices(self) -> Iterator[tuple[slice, slice, tuple[int, int]]]:
        """Yield ``(weight_slice, bias_slice, weight_shape)`` per layer."""
        offset = 0
        for fan_in, fan_out in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            w_end = offset + fan_in * fan_out
            b_end = w_end + fan_out
            yield slice(offset, w_end), slice(w_end, b_end), (fan_in, fan_out)
            offset = b_end

    def last_layer_slice(self) -> slice:
        """Contiguous slice holding the output layer's ``W`` and ``b``."""
        *_, (w_sl, b_sl, _) = self.layer_slices()
        return slice(w_sl.start, b_sl.stop)

    def unpack(self, weights: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        weights = check_weights(self, weights)
        return [
            (weights[w_sl].reshape(shape), weights[b_sl])
            for w_sl, b_sl, shape in self.layer_slices()
        ]

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["layer_widths"]), d.get("activation", "relu"))


@dataclass(frozen=True)
class LabeledBatch:
    """Inputs ``(n, d)`` with integer labels ``(n,)``.

    ``n == 0`` is allowed so that a prior-only objective can be expressed
    through the same functions.
    """

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("labels must be 1-D with one entry per input row")
        if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
            raise ValueError("labels must be non-negative integers")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @classmethod
    def empty(cls, input_dim: int) -> "LabeledBatch":
        return cls(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64))

    def subset(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.inputs[idx], self.labels[idx])


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean isotropic Gaussian prior with the given precision.

    Precision 0 is accepted and means "no prior" (pure likelihood); routines
    that need a proper prior (KL, Laplace) reject it themselves.
    """

    precision: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.precision) or self.precision < 0:
            raise ValueError(f"prior precision must be finite and >= 0, got {self.precision}")

    @property
    def variance(self) -> float:
        return 1.0 / self.precision


def check_weights(spec: NetworkSpec, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} weights, got shape {w.shape}")
    return w


def init_weights(
    spec: NetworkSpec, seed: int, scale_rule: Union[str, float] = "fan_in"
) -> np.ndarray:
    """Draw initial weights; biases start at zero.

    ``scale_rule="fan_in"`` draws every weight from N(0, 1/fan_in). A float
    is used as a fixed standard deviation instead (0 gives all zeros).
    """
    rng = np.random.default_rng(seed)
    w = np.zeros(spec.n_params)
    for w_sl, _, (fan_in, fan_out) in spec.layer_slices():
        if scale_rule == "fan_in":
            std = 1.0 / np.sqrt(fan_in)
        elif isinstance(scale_rule, (int, float)):
            std = float(scale_rule)
        else:
            raise ValueError(f"unknown scale rule {scale_rule!r}")
        w[w_sl] = std * rng.standard_normal(fan_in * fan_out)
    return w


def _act(spec: NetworkSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _act_grad(spec: NetworkSpec, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if spec.activation == "tanh":
        return 1.0 - a * a
    # subgradient of relu at exactly 0 is taken as 0
    return (z > 0.0).astype(np.float64)


def _as_matrix(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"input dimension mismatch: expected {spec.input_dim}, got {x.shape}")
    return x, single


def forward(spec: NetworkSpec, weights, x) -> np.ndarray:
    """Logits for a single input ``(d,)`` or a batch ``(n, d)``."""
    x, single = _as_matrix(spec, x)
    h = x
    layers = spec.unpack(weights)
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = _act(spec, h)
    return h[0] if single else h


def penultimate_features(spec: NetworkSpec, weights, x) -> np.ndarray:
    """Activations feeding the output layer (the inputs themselves for a linear net)."""
    x, single = _as_matrix(spec, x)
    h = x
    for W, b in spec.unpack(weights)[:-1]:
        h = _act(spec, h @ W + b)
    return h[0] if single else h


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def neg_log_joint(
    spec: NetworkSpec,
    weights,
    batch: LabeledBatch,
    prior: PriorSpec,
    likelihood_scale: float = 1.0,
) -> float:
    """``-(scale * sum_i log p(y_i|x_i,w) - precision/2 * ||w||^2)``.

    ``likelihood_scale`` rescales a minibatch to the full dataset (n / b).
    """
    w = check_weights(spec, weights)
    penalty = 0.5 * prior.precision * float(w @ w)
    if len(batch) == 0:
        return penalty
    logp = log_softmax(forward(spec, w, batch.inputs))
    nll = -float(logp[np.arange(len(batch)), batch.labels].sum())
    return likelihood_scale * nll + penalty


def grad_neg_log_joint(
    spec: NetworkSpec,
    weights,
    batch: LabeledBatch,
    prior: PriorSpec,
    likelihood_scale: float = 1.0,
) -> np.ndarray:
    """Exact reverse-mode gradient of :func:`neg_log_joint`."""
    w = check_weights(spec, weights)
    grad = prior.precision * w
    n = len(batch)
    if n == 0:
        return grad

    layers = spec.unpack(w)
    # forward pass, keeping pre- and post-activations
    acts = [batch.inputs]
    pre = []
    h = batch.inputs
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        pre.append(z)
        h = _act(spec, z) if i < len(layers) - 1 else z
        acts.append(h)

    delta = softmax(acts[-1])
    delta[np.arange(n), batch.labels] -= 1.0
    delta *= likelihood_scale

    slices = list(spec.layer_slices())
    for i in range(len(layers) - 1, -1, -1):
        w_sl, b_sl, _ = slices[i]
        grad[w_sl] += (acts[i].T @ delta).ravel()
        grad[b_sl] += delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * _act_grad(spec, pre[i - 1], acts[i])
    return grad


def finite_diff_grad(
    spec: NetworkSpec,
    weights,
    batch: LabeledBatch,
    prior: PriorSpec,
    h: float = 1e-5,
    likelihood_scale: float = 1.0,
) -> np.ndarray:
    """Central-difference gradient of :func:`neg_log_joint`. Test oracle only."""
    if h <= 0:
        raise ValueError("h must be positive")
    w = check_weights(spec, weights).copy()
    out = np.empty_like(w)
    for j in range(w.size):
        orig = w[j]
        w[j] = orig + h
        f_plus = neg_log_joint(spec, w, batch, prior, likelihood_scale)
        w[j] = orig - h
        f_minus = neg_log_joint(spec, w, batch, prior, likelihood_scale)
        w[j] = orig
        out[j] = (f_plus - f_minus) / (2 * h)
    return out


def accuracy(probs: np.ndarray, labels: Sequence[int]) -> float:
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))
