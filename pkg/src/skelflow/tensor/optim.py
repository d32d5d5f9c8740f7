"""SGD with Nesterov momentum and L1 regularization, plus lr schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidArgumentError, TrainingDivergedError
from .nn import Parameter


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    nesterov: bool = True
    l1_weight: float = 0.0
    velocity: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise InvalidArgumentError(f"learning rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.l1_weight < 0:
            raise InvalidArgumentError(f"l1 weight must be >= 0, got {self.l1_weight}")


def sgd_step(params: Sequence[Parameter], state: OptimizerState, names: Optional[Sequence[str]] = None) -> None:
    """Apply one update in place and zero the gradients.

    With velocity ``v``, momentum ``mu``, learning rate ``lr`` and gradient
    ``g`` (plus ``l1 * sign(w)`` for convolution kernels)::

        v <- mu * v - lr * g
        w <- w + mu * v - lr * g      (nesterov)
        w <- w + v                    (plain momentum)

    All gradients are validated before any parameter is touched.
    """
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    grads = []
    for p, name in zip(params, names):
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(name)
        if state.l1_weight and p.kind == "conv":
            g = g + state.l1_weight * np.sign(p.values)
        grads.append(g)
    lr, mu = state.learning_rate, state.momentum
    for p, g in zip(params, grads):
        v = state.velocity.get(id(p))
        if v is None:
            v = np.zeros_like(p.values)
        v = mu * v - lr * g
        state.velocity[id(p)] = v
        if state.nesterov:
            p.values = p.values + mu * v - lr * g
        else:
            p.values = p.values + v
        p.zero_grad()


@dataclass
class StepDecay:
    """Divide the rate by ``factor`` every ``every`` epochs (epochs count from 1)."""

    initial: float
    factor: float = 5.0
    every: int = 4

    def rate(self, epoch: int) -> float:
        if epoch < 1:
            raise InvalidArgumentError(f"epochs count from 1, got {epoch}")
        return self.initial / self.factor ** ((epoch - 1) // self.every)


@dataclass
class PlateauDecay:
    """Divide the rate by ``factor`` once the monitored loss has not improved
    for more than ``patience`` consecutive epochs."""

    initial: float
    factor: float = 10.0
    patience: int = 10
    current: float = field(init=False)
    best: float = field(init=False, default=math.inf)
    stale: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.current = self.initial

    def rate(self, epoch: int) -> float:
        return self.current

    def observe(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale > self.patience:
                self.current /= self.factor
                self.stale = 0
        return self.current
