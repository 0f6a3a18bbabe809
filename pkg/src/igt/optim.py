"""Rectified Adam with decoupled weight decay, plus the step-decay schedule.

The variance-rectification term follows the cited update rule: with
rho_inf = 2/(1-beta2) - 1 and rho_t = rho_inf - 2 t beta2^t / (1 - beta2^t),
steps where rho_t > 4 use the adaptive update scaled by

    r_t = sqrt(((rho_t-4)(rho_t-2) rho_inf) / ((rho_inf-4)(rho_inf-2) rho_t))

and earlier steps fall back to the plain bias-corrected momentum update.
Weight decay is decoupled: theta <- theta - lr * wd * theta each step,
independent of the gradient path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .tensor import Tensor


@dataclass
class LrSchedule:
    """Constant rate that drops once at ``decay_epoch`` (inclusive)."""

    initial: float = 1e-3
    decayed: float = 1e-4
    decay_epoch: int = 20


def lr_at(epoch: int, sched: LrSchedule) -> float:
    return sched.initial if epoch < sched.decay_epoch else sched.decayed


class RAdam:
    """Rectified Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-5):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def zero_grad(self) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.grad[...] = 0.0

    def step(self, lr: float) -> None:
        self.t += 1
        t = self.t
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        rho_t = self.rho_inf - 2.0 * t * (self.beta2 ** t) / bc2
        rectified = rho_t > 4.0
        if rectified:
            r_t = math.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * self.rho_inf)
                            / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho_t))

        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r} at step {t}")
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            if rectified:
                v_hat = np.sqrt(v / bc2)
                p.data -= lr * r_t * m_hat / (v_hat + self.eps)
            else:
                p.data -= lr * m_hat
