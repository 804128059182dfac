"""Posterior approximations and the Bayesian model average over them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from bayes_conformal.nn_core import (
    NetworkSpec,
    check_weights,
    forward,
    penultimate_features,
    softmax,
)


@dataclass
class Point:
    weights: np.ndarray
    kind: str = field(default="point", init=False)


@dataclass
class Ensemble:
    members: list

    kind: str = field(default="ensemble", init=False)

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("ensemble needs at least one member")


@dataclass
class MeanField:
    means: np.ndarray
    log_sigmas: np.ndarray
    kind: str = field(default="mean_field", init=False)

    def __post_init__(self):
        if np.shape(self.means) != np.shape(self.log_sigmas):
            raise ValueError("means and log_sigmas must have equal length")

    @property
    def sigmas(self) -> np.ndarray:
        return np.exp(self.log_sigmas)


@dataclass
class SampleChain:
    samples: list
    kind: str = field(default="sample_chain", init=False)

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("sample chain is empty")


@dataclass
class LaplaceLastLayer:
    """Gaussian over the output layer's ``(W, b)``; the body stays at the MAP.

    ``last_layer_mean`` uses the flat layout of the output layer inside the
    full weight vector, i.e. ``W`` row-major ``(h, K)`` followed by ``b``.
    """

    map_weights: np.ndarray
    last_layer_mean: np.ndarray
    last_layer_cov: np.ndarray
    kind: str = field(default="laplace_last_layer", init=False)

    def __post_init__(self):
        cov = np.asarray(self.last_layer_cov)
        m = np.size(self.last_layer_mean)
        if cov.shape != (m, m):
            raise ValueError(f"covariance must be {m}x{m}, got {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-8, rtol=0):
            raise ValueError("covariance is not symmetric")
        if m and np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-8:
            raise ValueError("covariance has negative eigenvalues")


PosteriorApproximation = Union[Point, Ensemble, MeanField, SampleChain, LaplaceLastLayer]


def _avg_softmax(spec, weight_list, x, temperature):
    total = None
    for w in weight_list:
        p = softmax(forward(spec, w, x) / temperature)
        total = p if total is None else total + p
    return total / len(weight_list)


def laplace_logit_moments(spec: NetworkSpec, post: LaplaceLastLayer, x) -> tuple[np.ndarray, np.ndarray]:
    """Mean and per-class variance of the linearized output logits."""
    phi = penultimate_features(spec, post.map_weights, x)
    single = phi.ndim == 1
    phi = np.atleast_2d(phi)
    K = spec.n_classes
    phi_aug = np.hstack([phi, np.ones((phi.shape[0], 1))])
    theta = np.asarray(post.last_layer_mean).reshape(phi_aug.shape[1], K)
    mean = phi_aug @ theta
    # Var(z_k) = sum_{j,l} phi_j phi_l Cov[theta_jk, theta_lk]
    cov = np.asarray(post.last_layer_cov).reshape(phi_aug.shape[1], K, phi_aug.shape[1], K)
    per_class = np.einsum("jklk->kjl", cov)
    var = np.einsum("nj,kjl,nl->nk", phi_aug, per_class, phi_aug)
    var = np.maximum(var, 0.0)
    if single:
        return mean[0], var[0]
    return mean, var


def posterior_predictive(
    posterior: PosteriorApproximation,
    spec: NetworkSpec,
    x,
    n_samples: int = 30,
    seed: int = 0,
    temperature: float = 1.0,
) -> np.ndarray:
    """Class probabilities for one input ``(d,)`` or a batch ``(n, d)``.

    ``temperature`` divides the logits before the softmax (>1 softens,
    <1 sharpens); 1.0 leaves the model untouched.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if isinstance(posterior, Point):
        return softmax(forward(spec, posterior.weights, x) / temperature)
    if isinstance(posterior, Ensemble):
        return _avg_softmax(spec, posterior.members, x, temperature)
    if isinstance(posterior, SampleChain):
        return _avg_softmax(spec, posterior.samples, x, temperature)
    if isinstance(posterior, MeanField):
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = np.random.default_rng(seed)
        mu = check_weights(spec, posterior.means)
        sigma = posterior.sigmas
        draws = [mu + sigma * rng.standard_normal(mu.size) for _ in range(n_samples)]
        return _avg_softmax(spec, draws, x, temperature)
    if isinstance(posterior, LaplaceLastLayer):
        mean, var = laplace_logit_moments(spec, posterior, x)
        kappa = 1.0 / np.sqrt(1.0 + (np.pi / 8.0) * var)
        return softmax(mean * kappa / temperature)
    raise TypeError(f"unsupported posterior type {type(posterior).__name__}")
