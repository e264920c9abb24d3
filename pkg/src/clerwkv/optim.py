"""AdamW with decoupled weight decay, and the warmup+cosine learning-rate rule."""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericFault
from .tensor import Parameter

ADAM_EPS = 1e-8


class AdamW:
    """Decoupled-weight-decay Adam over a fixed parameter list.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
    A parameter whose gradient was never populated only experiences decay.
    """

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999,
                 eps=ADAM_EPS, weight_decay=1e-4):
        self.params: list[Parameter] = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericFault(f"NaN/Inf gradient on parameter '{p.name}'")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) \
                - self.lr * self.weight_decay * p.data


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear ramp to base_lr over the warmup, then cosine decay to zero."""
    step = min(max(step, 0), total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
