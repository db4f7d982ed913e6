"""Bias-corrected Adam and the warmup-then-linear-decay LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus a step counter.

    Moments are keyed by parameter name and stay shape-congruent with
    their parameters; ``step`` increases by one per ``adam_step`` call.
    """

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One in-place Adam update over all parameters.

    ``lr=0`` leaves parameter values bit-identical while still advancing the
    moments and step counter. A NaN gradient aborts, naming the parameter.
    """
    if lr < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if np.isnan(g).any():
            raise NumericError(f"NaN gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if lr != 0.0:
            update = (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
            p.data -= update


@dataclass(frozen=True)
class WarmupLinearSchedule:
    """LR ramps linearly 0 -> base over the warmup fraction, then decays to 0.

    Piecewise-linear, continuous, and nonnegative on [0, total_steps];
    the peak sits at step = warmup_fraction * total_steps.
    """

    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.05

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigurationError(f"base_lr must be positive, got {self.base_lr}")
        if self.total_steps <= 0:
            raise ConfigurationError(f"total_steps must be positive, got {self.total_steps}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigurationError(
                f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}")

    def __call__(self, step: float) -> float:
        warmup_steps = self.warmup_fraction * self.total_steps
        if step >= self.total_steps:
            return 0.0
        if step < warmup_steps:
            return self.base_lr * step / warmup_steps
        return self.base_lr * (self.total_steps - step) / (self.total_steps - warmup_steps)
