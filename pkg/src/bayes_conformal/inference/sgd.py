"""MAP training by minibatch SGD with momentum, and deep ensembles."""

from __future__ import annotations

import dataclasses
import logging
import math
from typing import Iterator, Optional

import numpy as np

from bayes_conformal.inference.config import TrainConfig, TrainingError, step_size_at
from bayes_conformal.inference.posteriors import Ensemble, Point
from bayes_conformal.nn_core import (
    LabeledBatch,
    NetworkSpec,
    forward,
    grad_neg_log_joint,
    init_weights,
)

log = logging.getLogger(__name__)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def minibatches(
    data: LabeledBatch, batch_size: int, rng: np.random.Generator
) -> Iterator[tuple[LabeledBatch, float]]:
    """One epoch of shuffled minibatches with their ``n / b`` rescaling."""
    n = len(data)
    if n == 0:
        yield data, 1.0
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield data.subset(idx), n / idx.size


def val_accuracy(spec: NetworkSpec, weights: np.ndarray, val: LabeledBatch) -> float:
    return float(np.mean(np.argmax(forward(spec, weights, val.inputs), axis=1) == val.labels))


class CheckpointSelector:
    """Keeps the state with best validation accuracy; earliest wins ties."""

    def __init__(self, every: int, score_fn):
        self.every = every
        self.score_fn = score_fn
        self.best_score = -np.inf
        self.best_state = None
        self.best_epoch = None

    def update(self, epoch: int, state) -> None:
        if self.every <= 0 or epoch % self.every:
            return
        score = self.score_fn(state)
        if score > self.best_score:
            self.best_score, self.best_state, self.best_epoch = score, state, epoch

    def result(self, final_state):
        return final_state if self.best_state is None else self.best_state


def train_map(
    spec: NetworkSpec,
    data: LabeledBatch,
    cfg: TrainConfig,
    val: Optional[LabeledBatch] = None,
    init: Optional[np.ndarray] = None,
) -> Point:
    """Minimize the full-data negative log joint with momentum SGD.

    Minibatch gradients are rescaled by ``n / batch_size`` so the objective
    is the dataset-level one. With ``val`` given, the returned weights are
    from the best-validation checkpoint.
    """
    rng = np.random.default_rng(cfg.seed)
    w = init_weights(spec, cfg.seed) if init is None else np.array(init, dtype=np.float64)
    v = np.zeros_like(w)
    spe = steps_per_epoch(len(data), cfg.batch_size)
    selector = CheckpointSelector(
        cfg.checkpoint_every if val is not None else 0,
        lambda state: val_accuracy(spec, state, val),
    )
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for batch, scale in minibatches(data, cfg.batch_size, rng):
            g = grad_neg_log_joint(spec, w, batch, cfg.prior, scale)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, step {step}")
            lr = step_size_at(cfg, step, spe)
            v = cfg.momentum_decay * v - lr * g
            w = w + v
            step += 1
        if not np.all(np.isfinite(w)):
            raise TrainingError(f"non-finite weights after epoch {epoch}")
        selector.update(epoch, w.copy())
    if selector.best_epoch is not None:
        log.debug("map: best checkpoint epoch %d (val acc %.4f)", selector.best_epoch, selector.best_score)
    return Point(selector.result(w))


def train_ensemble(
    spec: NetworkSpec,
    data: LabeledBatch,
    cfg: TrainConfig,
    n_members: int = 5,
    val: Optional[LabeledBatch] = None,
) -> Ensemble:
    if n_members < 1:
        raise ValueError("ensemble needs n_members >= 1")
    members = []
    for j in range(n_members):
        member_cfg = dataclasses.replace(cfg, seed=cfg.seed + j)
        members.append(train_map(spec, data, member_cfg, val=val).weights)
    return Ensemble(members)
