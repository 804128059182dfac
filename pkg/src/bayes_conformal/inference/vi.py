"""Mean-field Gaussian variational inference with the reparameterization trick."""

from __future__ import annotations

from typing import Optional

import numpy as np

from bayes_conformal.inference.config import TrainConfig, TrainingError, step_size_at
from bayes_conformal.inference.posteriors import MeanField, posterior_predictive
from bayes_conformal.inference.sgd import CheckpointSelector, minibatches, steps_per_epoch
from bayes_conformal.nn_core import (
    LabeledBatch,
    NetworkSpec,
    PriorSpec,
    grad_neg_log_joint,
    init_weights,
    neg_log_joint,
)

_NO_PRIOR = PriorSpec(0.0)


def kl_gaussian_diag(means, log_sigmas, prior: PriorSpec) -> float:
    """KL(q || p) for q = N(means, diag(exp(2 log_sigmas))), p = N(0, I / precision)."""
    mu = np.asarray(means, dtype=np.float64)
    rho = np.asarray(log_sigmas, dtype=np.float64)
    if mu.shape != rho.shape:
        raise ValueError("means and log_sigmas must have equal length")
    if prior.precision <= 0:
        raise ValueError("KL to the prior needs a positive prior precision")
    lam = prior.precision
    per_coord = -0.5 * np.log(lam) - rho + 0.5 * lam * (np.exp(2 * rho) + mu * mu) - 0.5
    return float(per_coord.sum())


def _kl_grads(mu, rho, lam):
    return lam * mu, lam * np.exp(2 * rho) - 1.0


class Adam:
    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return -lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_mfvi(
    spec: NetworkSpec,
    data: LabeledBatch,
    cfg: TrainConfig,
    init_sigma: float = 0.01,
    n_train_samples: int = 1,
    val: Optional[LabeledBatch] = None,
    history: Optional[list] = None,
) -> MeanField:
    """Maximize ``E_q[log p(D|w)] - KL(q || p)`` with Adam.

    Each step draws ``n_train_samples`` reparameterized weights
    ``w = mu + sigma * eps`` on a minibatch rescaled to the full dataset.
    If ``history`` is a list, the per-step ELBO estimates are appended to it.
    """
    if init_sigma <= 0:
        raise ValueError("init_sigma must be positive")
    if n_train_samples < 1:
        raise ValueError("n_train_samples must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    mu = init_weights(spec, cfg.seed)
    rho = np.full_like(mu, np.log(init_sigma))
    opt_mu, opt_rho = Adam(mu.shape), Adam(rho.shape)
    lam = cfg.prior.precision
    spe = steps_per_epoch(len(data), cfg.batch_size)
    selector = CheckpointSelector(
        cfg.checkpoint_every if val is not None else 0,
        lambda state: _val_accuracy(spec, state, val),
    )

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for batch, scale in minibatches(data, cfg.batch_size, rng):
            sigma = np.exp(rho)
            g_mu = np.zeros_like(mu)
            g_rho = np.zeros_like(rho)
            expected_nll = 0.0
            for _ in range(n_train_samples):
                eps = rng.standard_normal(mu.size)
                w = mu + sigma * eps
                if len(batch):
                    expected_nll += neg_log_joint(spec, w, batch, _NO_PRIOR, scale)
                    g_w = grad_neg_log_joint(spec, w, batch, _NO_PRIOR, scale)
                    g_mu += g_w
                    g_rho += g_w * sigma * eps
            expected_nll /= n_train_samples
            g_mu /= n_train_samples
            g_rho /= n_train_samples
            kl_mu, kl_rho = _kl_grads(mu, rho, lam)
            g_mu += kl_mu
            g_rho += kl_rho

            elbo = -expected_nll - kl_gaussian_diag(mu, rho, cfg.prior)
            if not np.isfinite(elbo):
                raise TrainingError(f"non-finite ELBO at epoch {epoch}, step {step}")
            if history is not None:
                history.append(elbo)

            lr = step_size_at(cfg, step, spe)
            mu = mu + opt_mu.step(g_mu, lr)
            rho = rho + opt_rho.step(g_rho, lr)
            step += 1
        selector.update(epoch, (mu.copy(), rho.copy()))

    mu, rho = selector.result((mu, rho))
    return MeanField(mu, rho)


def _val_accuracy(spec, state, val, n_samples: int = 10) -> float:
    probs = posterior_predictive(MeanField(*state), spec, val.inputs, n_samples=n_samples, seed=0)
    return float(np.mean(np.argmax(probs, axis=1) == val.labels))
