from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from bayes_conformal.nn_core import PriorSpec

SCHEDULES = ("constant", "cosine", "cyclical")


class TrainingError(RuntimeError):
    """Raised when an optimizer or sampler produces non-finite state."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 80
    step_size: float = 1e-3
    momentum_decay: float = 0.9
    seed: int = 1
    prior: PriorSpec = field(default_factory=PriorSpec)
    schedule: str = "cosine"
    cycle_epochs: int = 75
    # validation accuracy is measured every this many epochs when a
    # validation set is supplied; 0 disables checkpoint selection
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.step_size >= 0:
            raise ValueError("step_size must be non-negative")
        if not 0 <= self.momentum_decay < 1:
            raise ValueError("momentum_decay must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "cyclical" and self.cycle_epochs < 1:
            raise ValueError("cycle_epochs must be >= 1")


@dataclass
class SghmcConfig(TrainConfig):
    burnin_epochs: int = 100
    thin_epochs: int = 10
    # None -> 1 - momentum_decay
    friction: Optional[float] = None
    preconditioner: str = "none"
    rms_decay: float = 0.99
    rms_eps: float = 1e-8

    def __post_init__(self):
        super().__post_init__()
        if self.burnin_epochs < 0:
            raise ValueError("burnin_epochs must be >= 0")
        if self.thin_epochs < 1:
            raise ValueError("thin_epochs must be >= 1")
        if self.friction is None:
            self.friction = 1.0 - self.momentum_decay
        if not 0 < self.friction <= 1:
            raise ValueError("friction must lie in (0, 1]")
        if self.preconditioner not in ("none", "rmsprop"):
            raise ValueError("preconditioner must be 'none' or 'rmsprop'")


def step_size_at(cfg: TrainConfig, step: int, steps_per_epoch: int) -> float:
    """Learning rate for a global step index under the configured schedule."""
    if cfg.schedule == "constant":
        return cfg.step_size
    if cfg.schedule == "cosine":
        total = cfg.epochs * steps_per_epoch
        return cfg.step_size * 0.5 * (1.0 + math.cos(math.pi * step / total))
    period = cfg.cycle_epochs * steps_per_epoch
    return cfg.step_size * 0.5 * (1.0 + math.cos(math.pi * (step % period) / period))
