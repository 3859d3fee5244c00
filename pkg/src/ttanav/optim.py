"""Gradient-descent optimizers over lists of Tensors."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class SGD:
    """Plain stochastic gradient descent: p -= lr * grad."""

    def __init__(self, params, lr: float):
        self.params = [p for p in params if isinstance(p, Tensor)]
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= np.asarray(self.lr * p.grad, dtype=p.data.dtype)


class Adam:
    """Adam with bias correction and an optional debiased EMA of the parameters.

    ``ema_decay`` > 0 maintains a zero-initialized shadow average updated as
    ema = decay * ema + (1 - decay) * p after every step; ``ema_params()``
    returns ema / (1 - decay^t) — the bias-corrected average used as
    evaluation-time weights (raw weights keep training).
    """

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, ema_decay: float = 0.0):
        self.params = [p for p in params if isinstance(p, Tensor)]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.ema_decay = ema_decay
        self.ema = [np.zeros_like(p.data) for p in self.params] if ema_decay > 0 else None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= np.asarray(self.lr * mhat / (np.sqrt(vhat) + self.eps), dtype=p.data.dtype)
        if self.ema is not None:
            d = self.ema_decay
            for i, p in enumerate(self.params):
                self.ema[i] = d * self.ema[i] + (1.0 - d) * p.data

    def ema_params(self):
        if self.ema is None:
            raise ValueError("EMA tracking was not enabled")
        debias = 1.0 - self.ema_decay ** self.t
        if debias <= 0:
            raise ValueError("no steps taken yet")
        return [e / debias for e in self.ema]
