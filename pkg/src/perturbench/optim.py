"""Minimal AdamW with a warmup-cosine schedule, shared by the probe and decoder."""

from __future__ import annotations

import math

import numpy as np


def warmup_cosine_lr(epoch: int, base_lr: float, warmup_epochs: int,
                     total_epochs: int, warmup_start_lr: float) -> float:
    """Learning rate for `epoch`: linear warmup then cosine decay to zero."""
    if epoch < warmup_epochs:
        return warmup_start_lr + (base_lr - warmup_start_lr) * epoch / warmup_epochs
    span = max(total_epochs - warmup_epochs, 1)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


class AdamW:
    """Decoupled weight decay Adam over a dict of numpy parameters.

    Decay is applied only to the names in `decay`.
    """

    def __init__(self, params: dict, weight_decay=0.0, betas=(0.9, 0.999),
                 eps=1e-8, decay=()):
        self.params = params
        self.wd = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.decay = set(decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            if k in self.decay and self.wd:
                p *= 1.0 - lr * self.wd
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]
