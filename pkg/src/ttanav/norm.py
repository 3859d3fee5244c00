"""Batch normalization with switchable statistic regimes.

The layer normalizes per channel as

    x_hat = (x - mean) / sqrt(var + eps) * beta + gamma

where ``beta`` scales and ``gamma`` shifts (names follow that convention
deliberately). Which (mean, var) pair is used, and whether the stored
running statistics mutate, depends on the mode:

- TRAIN:  batch statistics over N*H*W; running stats updated by the moving
          average; gradient flows through the batch statistics.
- FROZEN: stored running stats, treated as constants; no mutation.
- ADAPT:  batch statistics folded into the running stats by the moving
          average (mu_k = (1-rho)*mu_{k-1} + rho*mu_batch, same for var),
          then the sample is normalized with the updated running stats
          (or pre-update stats when ``adapt_pre_update`` is set); the
          statistics are treated as constants for the gradient.
- BATCH:  batch statistics, gradient through them, but running stats are
          left untouched (normalization-only adaptation).

Batch size 1 is fine for conv features: statistics pool over N*H*W.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_op
from .nn import Module


class Mode(Enum):
    TRAIN = "train"
    FROZEN = "frozen"
    ADAPT = "adapt"
    BATCH = "batch"


class BatchNorm2d(Module):
    """Per-channel normalization of NCHW tensors with mode-dependent statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.mode = Mode.TRAIN
        self.adapt_pre_update = False
        # beta scales, gamma shifts
        self.beta = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.gamma = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def update_running_stats(self, mu_batch, var_batch):
        """Moving-average blend: new = (1-rho)*old + rho*batch, per channel."""
        if self.mode not in (Mode.TRAIN, Mode.ADAPT):
            raise RuntimeError(f"running stats are frozen in {self.mode.value} mode")
        rho = self.momentum
        self.running_mean[...] = (1.0 - rho) * self.running_mean + rho * np.asarray(mu_batch, dtype=self.running_mean.dtype)
        self.running_var[...] = (1.0 - rho) * self.running_var + rho * np.asarray(var_batch, dtype=self.running_var.dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != self.channels:
            raise ValueError(f"expected NCHW with C={self.channels}, got {x.data.shape}")
        if np.any(self.running_var < 0):
            raise ValueError("negative stored variance")
        mode = self.mode
        if mode in (Mode.TRAIN, Mode.BATCH):
            return self._forward_batch_stats(x, update=(mode == Mode.TRAIN))
        if mode == Mode.ADAPT:
            mu_b = x.data.mean(axis=(0, 2, 3))
            var_b = x.data.var(axis=(0, 2, 3))  # biased, matches the moving-average semantics
            if self.adapt_pre_update:
                mu, var = self.running_mean.copy(), self.running_var.copy()
                self.update_running_stats(mu_b, var_b)
            else:
                self.update_running_stats(mu_b, var_b)
                mu, var = self.running_mean.copy(), self.running_var.copy()
            return self._normalize_const_stats(x, mu, var)
        return self._normalize_const_stats(x, self.running_mean, self.running_var)

    def _normalize_const_stats(self, x: Tensor, mu, var) -> Tensor:
        """Eq-style normalization with (mu, var) held constant for the gradient."""
        dt = x.data.dtype
        ivstd = (1.0 / np.sqrt(var.astype(dt) + dt.type(self.eps))).reshape(1, -1, 1, 1)
        mu4 = mu.astype(dt).reshape(1, -1, 1, 1)
        beta4 = self.beta.data.astype(dt).reshape(1, -1, 1, 1)
        xhat = (x.data - mu4) * ivstd
        out = xhat * beta4 + self.gamma.data.astype(dt).reshape(1, -1, 1, 1)
        beta, gamma = self.beta, self.gamma

        def backward(g):
            if x.requires_grad:
                x._accum(g * ivstd * beta4)
            if beta.requires_grad:
                beta._accum((g * xhat).sum(axis=(0, 2, 3)).astype(beta.data.dtype))
            if gamma.requires_grad:
                gamma._accum(g.sum(axis=(0, 2, 3)).astype(gamma.data.dtype))

        return make_op(out, (x, beta, gamma), backward)

    def _forward_batch_stats(self, x: Tensor, update: bool) -> Tensor:
        dt = x.data.dtype
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        mu = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mu.reshape(1, -1, 1, 1)
        var = (xc * xc).mean(axis=(0, 2, 3))
        if update:
            self.update_running_stats(mu, var)
        ivstd = (1.0 / np.sqrt(var + dt.type(self.eps))).reshape(1, -1, 1, 1)
        xhat = xc * ivstd
        beta4 = self.beta.data.astype(dt).reshape(1, -1, 1, 1)
        out = xhat * beta4 + self.gamma.data.astype(dt).reshape(1, -1, 1, 1)
        beta, gamma = self.beta, self.gamma

        def backward(g):
            if beta.requires_grad:
                beta._accum((g * xhat).sum(axis=(0, 2, 3)).astype(beta.data.dtype))
            if gamma.requires_grad:
                gamma._accum(g.sum(axis=(0, 2, 3)).astype(gamma.data.dtype))
            if x.requires_grad:
                # full BN backward through mu and var
                gx = g * beta4
                sum_gx = gx.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
                sum_gx_xhat = (gx * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
                x._accum(ivstd / m * (m * gx - sum_gx - xhat * sum_gx_xhat))

        return make_op(out, (x, beta, gamma), backward)


def norm_layers(model: Module):
    """Yield (dotted_name, BatchNorm2d) for every norm layer in ``model``."""
    for name, mod in model.named_modules():
        if isinstance(mod, BatchNorm2d):
            yield name, mod


def set_block_modes(model: Module, block_modes: dict):
    """Assign modes to every norm layer under the named top-level blocks.

    ``block_modes`` maps a block name (attribute on ``model``, e.g. "block1")
    to a Mode. Layers outside the named blocks keep their current mode.
    """
    valid = set(model._modules)
    for block_name, mode in block_modes.items():
        if block_name not in valid:
            raise KeyError(f"unknown block {block_name!r}; model has {sorted(valid)}")
        for _, layer in norm_layers(model._modules[block_name]):
            layer.mode = mode


def set_momentum(model: Module, rho: float):
    for _, layer in norm_layers(model):
        layer.momentum = rho
