"""Update rules (SGD, momentum, Adam) and the per-step learning-rate schedule.

Momentum keeps the averaged form m = beta*m + (1-beta)*grad. Adam follows the
standard recurrences with bias correction; the step counter holds completed
updates, so correction on update t uses exponent t+1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .estimator import PositivityError

__all__ = [
    "TrainingDiverged",
    "OptimizerState",
    "Schedule",
    "lr_at",
    "sgd_step",
    "momentum_step",
    "adam_step",
    "apply_step",
    "remap_state_for_ste",
    "adam_g_plus",
]


class TrainingDiverged(RuntimeError):
    """A gradient, activation, or loss stopped being finite."""


@dataclass
class OptimizerState:
    """Per-tensor optimizer state. Buffers match the tensor's shape; sgd has
    none."""

    kind: str  # sgd | momentum | adam
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        for name in ("beta", "beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")

    @classmethod
    def sgd(cls):
        return cls(kind="sgd")

    @classmethod
    def momentum(cls, shape, beta=0.9):
        return cls(kind="momentum", beta=beta, m=np.zeros(shape))

    @classmethod
    def adam(cls, shape, beta1=0.9, beta2=0.95, eps=1e-8):
        return cls(kind="adam", beta1=beta1, beta2=beta2, eps=eps,
                   m=np.zeros(shape), v=np.zeros(shape))

    def clone(self):
        return replace(
            self,
            m=None if self.m is None else self.m.copy(),
            v=None if self.v is None else self.v.copy(),
        )


@dataclass(frozen=True)
class Schedule:
    """Per-step positive scale eta_t on the update. cosine_with_warmup ramps
    linearly to base_lr over floor(warmup_fraction*total_steps) steps, then
    follows a half cosine down."""

    base_lr: float
    total_steps: int
    kind: str = "constant"  # constant | cosine_with_warmup
    warmup_fraction: float = 0.0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.kind not in ("constant", "cosine_with_warmup"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def lr_at(t: int, sched: Schedule) -> float:
    if not 0 <= t < sched.total_steps:
        raise ValueError(f"step {t} outside schedule of {sched.total_steps} steps")
    if sched.kind == "constant":
        return sched.base_lr
    w = int(math.floor(sched.warmup_fraction * sched.total_steps))
    if t < w:
        return sched.base_lr * (t + 1) / w
    return sched.base_lr * 0.5 * (1.0 + math.cos(math.pi * (t - w) / (sched.total_steps - w)))


def _check_grad(grad):
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged("non-finite gradient")


def sgd_step(grad, lr: float):
    """Weight delta -lr * grad."""
    grad = np.asarray(grad, dtype=np.float64)
    _check_grad(grad)
    out = -lr * grad
    return float(out) if out.ndim == 0 else out


def momentum_step(grad, lr: float, state: OptimizerState):
    """m <- beta*m + (1-beta)*grad; returns -lr*m. Mutates state."""
    grad = np.asarray(grad, dtype=np.float64)
    _check_grad(grad)
    state.m = state.beta * state.m + (1.0 - state.beta) * grad
    out = -lr * state.m
    return float(out) if out.ndim == 0 else out


def adam_step(grad, lr: float, state: OptimizerState):
    """Standard Adam update with bias correction; mutates buffers and the
    step counter."""
    grad = np.asarray(grad, dtype=np.float64)
    _check_grad(grad)
    t = state.step + 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    state.step = t
    denom = np.sqrt(v_hat) + state.eps
    # eps = 0 with an all-zero gradient history: m_hat is 0 too, update is 0
    out = np.divide(-lr * m_hat, denom, out=np.zeros_like(denom), where=denom > 0.0)
    return float(out) if out.ndim == 0 else out


def apply_step(grad, lr: float, state: OptimizerState):
    """Dispatch on state.kind."""
    if state.kind == "sgd":
        return sgd_step(grad, lr)
    if state.kind == "momentum":
        return momentum_step(grad, lr, state)
    return adam_step(grad, lr, state)


def adam_g_plus(state: OptimizerState) -> float:
    """Inherent per-step magnitude bound |delta| <= lr * max(1, (1-b1)/sqrt(1-b2))."""
    return max(1.0, (1.0 - state.beta1) / math.sqrt(1.0 - state.beta2))


def remap_state_for_ste(state: OptimizerState, qhat_derivs) -> OptimizerState:
    """Rescale accumulated buffers so the state continues cleanly under the
    straight-through twin: momentum m/Q'hat, Adam m/Q'hat and v/Q'hat^2 with
    the step counter preserved. The alpha learning-rate factor is carried by
    the twin's schedule, not the buffers."""
    qhat_derivs = np.asarray(qhat_derivs, dtype=np.float64)
    if np.any(qhat_derivs <= 0.0):
        raise PositivityError("estimator derivative nonpositive at hand-off")
    out = state.clone()
    if state.kind == "momentum":
        out.m = out.m / qhat_derivs
    elif state.kind == "adam":
        out.m = out.m / qhat_derivs
        out.v = out.v / qhat_derivs ** 2
    return out
