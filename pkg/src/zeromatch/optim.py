"""AdamW with decoupled weight decay, and the step schedules used in training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, ScheduleRangeError


@dataclass
class AdamWState:
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    exp_avg: list = field(default_factory=list)
    exp_avg_sq: list = field(default_factory=list)


def adamw_step(params, grads, state, lr):
    """Apply one AdamW update in place to the arrays in ``params``.

    Weight decay shrinks each parameter by ``lr * weight_decay`` before the
    bias-corrected adaptive step, independently of the gradient. Parameters
    whose gradient is ``None`` are left untouched.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be nonnegative, got {lr}")
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p) for p in params]
        state.exp_avg_sq = [np.zeros_like(p) for p in params]
    beta1, beta2 = state.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class AdamW:
    """Optimizer over a list of :class:`~zeromatch.nn.Tensor` parameters."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.lr = lr
        self.state = AdamWState(betas=tuple(betas), eps=eps, weight_decay=weight_decay)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        adamw_step([p.data for p in self.params], [p.grad for p in self.params], self.state, lr)

    def state_arrays(self):
        out = {"step": np.array(self.state.step)}
        for i, (m, v) in enumerate(zip(self.state.exp_avg, self.state.exp_avg_sq)):
            out[f"exp_avg.{i}"] = m
            out[f"exp_avg_sq.{i}"] = v
        return out


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to ``base_lr`` then ``base_lr * cos(7*pi*s / (16*S))``.

    ``s`` counts steps since the end of warmup and ``S`` is the length of the
    post-warmup segment.
    """

    base_lr: float
    total_steps: int
    warmup_steps: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}, {self.total_steps}"
            )

    def __call__(self, t):
        return lr_at(self, t)


def lr_at(schedule, t):
    if t < 0 or t > schedule.total_steps:
        raise ScheduleRangeError(f"step {t} outside [0, {schedule.total_steps}]")
    w = schedule.warmup_steps
    if t < w:
        return schedule.base_lr * t / w
    span = schedule.total_steps - w
    return schedule.base_lr * math.cos(7.0 * math.pi * (t - w) / (16.0 * span))


@dataclass(frozen=True)
class AnnealSchedule:
    """Weight on the auxiliary distillation loss over stage-2 steps.

    ``anneal=1`` ramps linearly from 0 to 1; ``anneal=0`` keeps it at 1.
    """

    anneal: int
    total_steps: int

    def __post_init__(self):
        if self.anneal not in (0, 1):
            raise ValueError(f"anneal flag must be 0 or 1, got {self.anneal}")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")

    def __call__(self, t):
        return alpha_at(self, t)


def alpha_at(schedule, t):
    if t < 0 or t > schedule.total_steps:
        raise ScheduleRangeError(f"step {t} outside [0, {schedule.total_steps}]")
    if not schedule.anneal:
        return 1.0
    return t / schedule.total_steps
