"""SGD with momentum and weight decay, and the step learning-rate schedule."""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, RegistryError


@dataclass
class LrSchedule:
    initial: float = 0.1
    milestones: tuple = (40, 70, 90)
    factor: float = 0.2

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigurationError("milestones must be strictly increasing")
        if not 0 < self.factor < 1:
            raise ConfigurationError("factor must lie in (0, 1)")

    def lr_at_epoch(self, epoch: int) -> float:
        return lr_at_epoch(self, epoch)


def lr_at_epoch(sched: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return sched.initial * sched.factor ** bisect_right(sched.milestones, epoch)


@dataclass
class SGD:
    """``v = momentum * v + (g + wd * p);  p -= lr * v``.

    Weight decay is added to the incoming (possibly already smoothed)
    gradient; the velocity itself is never smoothed.
    """

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> dict:
        if params.keys() != grads.keys():
            raise RegistryError(
                f"parameter/gradient registries differ: {sorted(set(params) ^ set(grads))}")
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise RegistryError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            d = g + p.dtype.type(self.weight_decay) * p if self.weight_decay else g
            v *= p.dtype.type(self.momentum)
            v += d
            p -= p.dtype.type(self.lr) * v
        return params
