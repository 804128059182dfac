"""Last-layer Laplace approximation with a dense generalized Gauss-Newton Hessian."""

from __future__ import annotations

import numpy as np

from bayes_conformal.inference.config import TrainingError
from bayes_conformal.inference.posteriors import LaplaceLastLayer
from bayes_conformal.nn_core import (
    LabeledBatch,
    NetworkSpec,
    PriorSpec,
    check_weights,
    forward,
    penultimate_features,
    softmax,
)


def last_layer_ggn(features: np.ndarray, probs: np.ndarray, precision: float) -> np.ndarray:
    """``sum_i J_i^T (diag(p_i) - p_i p_i^T) J_i + precision * I``.

    ``features`` are the bias-augmented penultimate activations ``(n, h+1)``.
    With parameters ordered row-major over ``(h+1, K)`` the per-example
    Jacobian is ``phi_i^T kron I_K``, so each term is ``phi phi^T kron Lambda``.
    """
    n, h1 = features.shape
    K = probs.shape[1]
    H = np.zeros((h1, K, h1, K))
    for k in range(K):
        for l in range(k, K):
            lam_kl = probs[:, k] * ((k == l) - probs[:, l])
            block = (features * lam_kl[:, None]).T @ features
            H[:, k, :, l] = block
            H[:, l, :, k] = block.T
    H = H.reshape(h1 * K, h1 * K)
    H += precision * np.eye(h1 * K)
    return H


def fit_laplace_last_layer(
    spec: NetworkSpec,
    map_weights,
    data: LabeledBatch,
    prior: PriorSpec,
) -> LaplaceLastLayer:
    """Gaussian over the output layer centred at the MAP, covariance ``H^-1``."""
    w = check_weights(spec, map_weights).copy()
    if prior.precision <= 0:
        raise ValueError("the Laplace fit needs a positive prior precision")
    h = spec.layer_widths[-2]
    if len(data):
        phi = penultimate_features(spec, w, data.inputs)
        probs = softmax(forward(spec, w, data.inputs))
    else:
        phi = np.zeros((0, h))
        probs = np.zeros((0, spec.n_classes))
    phi_aug = np.hstack([phi, np.ones((phi.shape[0], 1))])
    H = last_layer_ggn(phi_aug, probs, prior.precision)

    cov = None
    for jitter in (0.0, 1e-8):
        try:
            L = np.linalg.cholesky(H + jitter * np.eye(H.shape[0]))
        except np.linalg.LinAlgError:
            continue
        L_inv = np.linalg.solve(L, np.eye(H.shape[0]))
        cov = L_inv.T @ L_inv
        break
    if cov is None:
        raise TrainingError("last-layer Hessian is not positive definite, even with jitter")
    cov = 0.5 * (cov + cov.T)
    return LaplaceLastLayer(w, w[spec.last_layer_slice()].copy(), cov)
