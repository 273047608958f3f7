"""Update rules and schedules: inner-loop SGD, outer-loop Adam with bias
correction, cosine-annealed learning rate, and patience-based early stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError
from .nn import tree_copy, tree_map, tree_zeros_like

MINIMIZE = "minimize"
MAXIMIZE = "maximize"


def sgd_step(params, grads, lr: float):
    """p' = p - lr * g, elementwise over the whole parameter tree."""
    return tree_map(lambda p, g: p - lr * g, params, grads)


@dataclass
class AdamState:
    m: Any
    v: Any
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(
            m=tree_zeros_like(params),
            v=tree_zeros_like(params),
            t=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = tree_map(lambda m_, g: b1 * m_ + (1.0 - b1) * g, state.m, grads)
    v = tree_map(lambda v_, g: b2 * v_ + (1.0 - b2) * g * g, state.v, grads)
    mc = 1.0 - b1**t
    vc = 1.0 - b2**t
    new_params = tree_map(
        lambda p, m_, v_: p - lr * (m_ / mc) / (np.sqrt(v_ / vc) + state.eps),
        params,
        m,
        v,
    )
    return AdamState(m=m, v=v, t=t, beta1=b1, beta2=b2, eps=state.eps), new_params


@dataclass
class Schedule:
    lr_max: float
    lr_min: float = 0.0
    max_step: int = 5000

    def __post_init__(self):
        if not (self.lr_max >= self.lr_min >= 0.0):
            raise ConfigError(
                f"schedule requires lr_max >= lr_min >= 0, got {self.lr_max}, {self.lr_min}"
            )
        if self.max_step <= 0:
            raise ConfigError(f"schedule.max_step must be > 0, got {self.max_step}")


def cosine_lr(step: int, schedule: Schedule) -> float:
    """Cosine annealing from lr_max to lr_min, clamped beyond max_step."""
    s = min(step, schedule.max_step)
    span = schedule.lr_max - schedule.lr_min
    return schedule.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * s / schedule.max_step))


@dataclass
class EarlyStopper:
    """Stops after `patience` consecutive non-improving evaluations.

    Keeps a deep snapshot of the best-scoring parameters; the snapshot is the
    training result, never the last step's parameters.
    """

    patience: int
    direction: str = MINIMIZE
    best_value: float | None = None
    best_step: int = -1
    best_params: Any = None
    bad_count: int = field(default=0)

    def __post_init__(self):
        if self.direction not in (MINIMIZE, MAXIMIZE):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")

    def _improved(self, value: float) -> bool:
        if self.best_value is None:
            return True
        if self.direction == MINIMIZE:
            return value < self.best_value
        return value > self.best_value

    def update(self, value: float, step: int, params) -> bool:
        """Record one evaluation; returns True when training should stop."""
        if self._improved(value):
            self.best_value = float(value)
            self.best_step = int(step)
            self.best_params = tree_copy(params)
            self.bad_count = 0
            return False
        self.bad_count += 1
        return self.bad_count >= self.patience
