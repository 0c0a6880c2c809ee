"""SGD with momentum, Adam, and the Adam-then-SGD learning-rate schedule.

Parameters and gradients are ``{name: ndarray}`` dicts; steps update the
parameter arrays in place.
"""
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass
class SGDState:
    lr: float = 1e-4
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def _check(params, grads):
    for name, p in params.items():
        if name not in grads:
            raise ShapeError(f"missing gradient for {name!r}")
        if np.shape(grads[name]) != np.shape(p):
            raise ShapeError(f"gradient shape {np.shape(grads[name])} != parameter {name!r} shape {np.shape(p)}")


def sgd_step(params, grads, state):
    """v <- mu*v + g;  theta <- theta - lr*v."""
    _check(params, grads)
    for name, p in params.items():
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        v *= state.momentum
        v += grads[name]
        p -= state.lr * v
    state.t += 1
    return params, state


def adam_step(params, grads, state):
    _check(params, grads)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class ScheduleConfig:
    adam_lr: float = 1e-4
    sgd_lr: float = 1e-4
    switch_step: int = 0  # first global step run with SGD; 0 means SGD throughout
    decay_factor: float = 0.1
    decay_every: int = 30
    decay_unit: str = "epochs"  # or "steps"
    steps_per_epoch: int = 1
    lr_min: float = 0.0

    def __post_init__(self):
        if self.adam_lr <= 0 or self.sgd_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.decay_every <= 0 or self.steps_per_epoch <= 0:
            raise ValueError("decay interval and steps_per_epoch must be positive")
        if self.decay_unit not in ("epochs", "steps"):
            raise ValueError(f"decay_unit must be 'epochs' or 'steps', got {self.decay_unit!r}")
        if self.lr_min < 0 or not 0 < self.decay_factor <= 1:
            raise ValueError("need lr_min >= 0 and 0 < decay_factor <= 1")


def schedule_step(cfg, global_step, switch_step=None):
    """Return ``(optimizer_name, lr)`` for a zero-based global step.

    ``switch_step`` overrides ``cfg.switch_step`` when an earlier switch was
    triggered at run time.
    """
    threshold = cfg.switch_step if switch_step is None else switch_step
    if global_step < threshold:
        return "adam", cfg.adam_lr
    elapsed = global_step - threshold
    if cfg.decay_unit == "epochs":
        elapsed //= cfg.steps_per_epoch
    lr = cfg.sgd_lr * cfg.decay_factor ** (elapsed // cfg.decay_every)
    return "sgd", max(lr, cfg.lr_min)


class OverfitMonitor:
    """Flags the Adam->SGD switch once a validation score worsens ``patience`` evals in a row."""

    def __init__(self, patience=3, higher_is_better=True):
        self.patience = patience
        self.sign = 1.0 if higher_is_better else -1.0
        self.prev = None
        self.streak = 0

    def update(self, score):
        if self.patience <= 0 or score is None or not np.isfinite(score):
            return False
        if self.prev is not None and self.sign * (score - self.prev) < 0:
            self.streak += 1
        else:
            self.streak = 0
        self.prev = score
        return self.streak >= self.patience
