"""Stochastic-gradient Hamiltonian Monte Carlo.

Discretization (friction ``g``, step ``eta``, preconditioner ``G``)::

    v <- (1 - g) v - eta * G * grad U(w) + N(0, 2 g eta G)
    w <- w + v

``U`` is the negative log joint with the minibatch likelihood rescaled by
``n / batch_size``. ``G`` is 1 without a preconditioner, or the RMSprop
diagonal ``1 / (sqrt(V) + eps)`` with ``V`` a running mean of squared
gradients.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from bayes_conformal.inference.config import SghmcConfig, TrainingError, step_size_at
from bayes_conformal.inference.posteriors import SampleChain
from bayes_conformal.inference.sgd import minibatches, steps_per_epoch
from bayes_conformal.nn_core import LabeledBatch, NetworkSpec, grad_neg_log_joint, init_weights

DIVERGENCE_NORM = 1e8


def run_sghmc(
    spec: NetworkSpec,
    data: LabeledBatch,
    cfg: SghmcConfig,
    init: Optional[np.ndarray] = None,
) -> SampleChain:
    """Simulate the chain for ``cfg.epochs`` epochs.

    One sample is kept at the end of every ``thin_epochs``-th epoch after the
    first ``burnin_epochs``. An empty ``data`` batch samples the prior, with
    one step per epoch.
    """
    if cfg.epochs <= cfg.burnin_epochs:
        raise ValueError("epochs must exceed burnin_epochs to keep any samples")
    rng = np.random.default_rng(cfg.seed)
    w = init_weights(spec, cfg.seed) if init is None else np.array(init, dtype=np.float64)
    v = np.zeros_like(w)
    sq_avg = None
    gamma = cfg.friction
    spe = steps_per_epoch(len(data), cfg.batch_size)
    samples = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for batch, scale in minibatches(data, cfg.batch_size, rng):
            g = grad_neg_log_joint(spec, w, batch, cfg.prior, scale)
            eta = step_size_at(cfg, step, spe)
            if cfg.preconditioner == "rmsprop":
                sq_avg = g * g if sq_avg is None else cfg.rms_decay * sq_avg + (1 - cfg.rms_decay) * g * g
                precond = 1.0 / (np.sqrt(sq_avg) + cfg.rms_eps)
            else:
                precond = 1.0
            noise = np.sqrt(2.0 * gamma * eta * precond) * rng.standard_normal(w.size)
            v = (1.0 - gamma) * v - eta * precond * g + noise
            w = w + v
            step += 1
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm > DIVERGENCE_NORM:
            raise TrainingError(f"sghmc diverged at epoch {epoch} (|w| = {norm:.3g})")
        if epoch > cfg.burnin_epochs and (epoch - cfg.burnin_epochs) % cfg.thin_epochs == 0:
            samples.append(w.copy())
    if not samples:
        raise TrainingError("no samples kept; check burnin_epochs and thin_epochs")
    return SampleChain(samples)
