"""AdamW with a linear warmup / linear decay learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return int(math.floor(warmup_ratio * total_steps))


def linear_schedule(step: int, peak_lr: float, total_steps: int, warmup: int) -> float:
    """0 -> peak over ``warmup`` steps, then linearly down to 0 at ``total_steps``."""
    if warmup > 0 and step < warmup:
        return peak_lr * step / warmup
    if step >= total_steps:
        return 0.0
    return peak_lr * (total_steps - step) / max(1, total_steps - warmup)


def decays(name: str) -> bool:
    """Weight decay applies to projection matrices only, not biases, norms or embeddings."""
    return name.endswith(".weight")


class AdamW:
    def __init__(self, params: dict, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name in sorted(params):
            p, g = params[name], grads[name].astype(params[name].dtype, copy=False)
            if self.weight_decay and decays(name):
                p *= 1.0 - lr * self.weight_decay
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
