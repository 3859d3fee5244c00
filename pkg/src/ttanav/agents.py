"""Test-time adaptation agents over a frozen navigation model.

Six methods share one act(Observation) -> action protocol:

- no_adapt: frozen statistics, single encoder pass (the pretrained baseline).
- dua: moving-average statistic updates (Adapt mode) in the masked blocks.
- tta_nav: Adapt-mode statistics plus a frozen decoder; per step the corrupted
  frame updates statistics and is reconstructed, and the policy sees the
  embedding of the reconstruction (second encoder pass, no stat updates).
- tent: per-frame batch-statistic normalization plus an entropy-descent SGD
  step on the norm scale/shift parameters only.
- tent_dua: tent's update on top of Adapt-mode moving-average statistics.
- shot_im: information-maximization loss (prediction entropy minus marginal
  entropy over a ring buffer of recent action distributions), scale/shift
  updates, Adapt-mode statistics.

Every agent owns a deep model replica: statistic mutation never leaks across
agents, and conv/dense weights are never touched by any method. Gradient
methods act on pre-update logits (act-then-adapt). The recurrent state is
zeroed per episode; adaptation state persists for the agent's lifetime (one
corruption stream).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import checkpoint
from .model import Decoder, Encoder, Policy, frame_to_tensor, make_policy_input
from .norm import Mode, norm_layers, set_block_modes
from .optim import SGD
from .sim import STOP

METHODS = ("no_adapt", "dua", "tta_nav", "tent", "tent_dua", "shot_im")
GRADIENT_METHODS = frozenset({"tent", "tent_dua", "shot_im"})
ENCODER_BLOCKS = ("block1", "block2", "block3", "head")


@dataclass(frozen=True)
class MethodConfig:
    method: str
    momentum: float = 0.01
    adapt_blocks: tuple = ("block1", "block2", "block3")
    lr: float = 1e-4
    shot_window: int = 64
    adapt_pre_update: bool = False      # normalize with pre-update running stats
    recon_stats_update: bool = False    # tta_nav: also update stats on the recon pass
    label: str | None = None            # display name (ablation rows); defaults to method

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        unknown = set(self.adapt_blocks) - set(ENCODER_BLOCKS)
        if unknown:
            raise ValueError(f"unknown adapt blocks {sorted(unknown)}")
        if self.method in GRADIENT_METHODS and self.lr < 0:
            raise ValueError("gradient methods require lr >= 0")
        if self.shot_window < 1:
            raise ValueError("shot window must be >= 1")

    @property
    def name(self) -> str:
        return self.label or self.method


@dataclass
class ModelBundle:
    """Serialized weights for the three components."""

    encoder_state: dict
    policy_state: dict
    decoder_state: dict | None = None

    @classmethod
    def load(cls, assets_dir):
        import os

        enc = checkpoint.load_state(os.path.join(assets_dir, "encoder.ttan"))
        pol = checkpoint.load_state(os.path.join(assets_dir, "policy.ttan"))
        dec_path = os.path.join(assets_dir, "decoder.ttan")
        dec = checkpoint.load_state(dec_path) if os.path.exists(dec_path) else None
        return cls(enc, pol, dec)


class AdaptiveAgent:
    """One adaptation method wired onto a private model replica."""

    def __init__(self, config: MethodConfig, bundle: ModelBundle):
        self.config = config
        self.encoder = Encoder()
        self.encoder.load_state_dict(bundle.encoder_state)
        self.policy = Policy()
        self.policy.load_state_dict(bundle.policy_state)
        self.decoder = None
        if config.method == "tta_nav":
            if bundle.decoder_state is None:
                raise ValueError("tta_nav requires a decoder checkpoint")
            self.decoder = Decoder()
            self.decoder.load_state_dict(bundle.decoder_state)
            for _, layer in norm_layers(self.decoder):
                layer.mode = Mode.FROZEN

        for _, layer in norm_layers(self.encoder):
            layer.mode = Mode.FROZEN
            layer.momentum = config.momentum
            layer.adapt_pre_update = config.adapt_pre_update
        adapt_mode = Mode.BATCH if config.method == "tent" else Mode.ADAPT
        if config.method != "no_adapt":
            set_block_modes(self.encoder, {b: adapt_mode for b in config.adapt_blocks})

        self._adapt_params = []
        if config.method in GRADIENT_METHODS:
            for block in config.adapt_blocks:
                for _, layer in norm_layers(self.encoder._modules[block]):
                    self._adapt_params += [layer.beta, layer.gamma]
            self.optimizer = SGD(self._adapt_params, lr=config.lr)
        else:
            self.optimizer = None
        for p in self.encoder.parameters() + self.policy.parameters():
            p.requires_grad = False
        for p in self._adapt_params:
            p.requires_grad = True

        self._shot_hist = deque(maxlen=config.shot_window - 1)
        self.h = None
        self.prev_action = STOP
        self.last_logits = None
        self.last_recon = None
        self.frames_seen = 0

    # -- agent protocol ---------------------------------------------------
    def reset(self):
        """Episode boundary: recurrent state and previous action only."""
        self.h = self.policy.initial_state()
        self.prev_action = STOP

    def act(self, obs) -> int:
        if self.h is None:
            self.reset()
        method = self.config.method
        if method in GRADIENT_METHODS:
            action = self._act_gradient(obs)
        elif method == "tta_nav":
            action = self._act_tta_nav(obs)
        else:
            action = self._act_plain(obs)
        self.prev_action = action
        self.frames_seen += 1
        return action

    # -- internals ----------------------------------------------------------
    def _policy_step(self, e, obs):
        x = make_policy_input(e, Policy.encode_goal(obs.goal_range, obs.goal_bearing), self.prev_action)
        logits, h_new = self.policy.step(x, self.h)
        return logits, h_new

    def _act_plain(self, obs) -> int:
        with ad.no_grad():
            _, e = self.encoder(frame_to_tensor(obs.rgb))
            logits, h_new = self._policy_step(e, obs)
        self.h = Tensor(h_new.data)
        self.last_logits = logits.data[0].copy()
        return int(np.argmax(logits.data[0]))

    def _act_tta_nav(self, obs) -> int:
        with ad.no_grad():
            z = self.encoder.features(frame_to_tensor(obs.rgb))  # stats update here
            recon = self.decoder(z)
            if not self.config.recon_stats_update:
                flipped = self._freeze_adapt_layers()
                try:
                    _, e = self.encoder(recon)
                finally:
                    for layer in flipped:
                        layer.mode = Mode.ADAPT
            else:
                _, e = self.encoder(recon)
            logits, h_new = self._policy_step(e, obs)
        self.h = Tensor(h_new.data)
        self.last_logits = logits.data[0].copy()
        self.last_recon = recon.data[0].transpose(1, 2, 0).copy()
        return int(np.argmax(logits.data[0]))

    def _freeze_adapt_layers(self):
        flipped = []
        for _, layer in norm_layers(self.encoder):
            if layer.mode == Mode.ADAPT:
                layer.mode = Mode.FROZEN
                flipped.append(layer)
        return flipped

    def _act_gradient(self, obs) -> int:
        _, e = self.encoder(frame_to_tensor(obs.rgb))
        logits, h_new = self._policy_step(e, obs)
        action = int(np.argmax(logits.data[0]))
        self.last_logits = logits.data[0].copy()
        self.h = Tensor(h_new.data)  # act-then-adapt: state from pre-update weights

        if self.config.method == "shot_im":
            loss = self._shot_loss(logits)
        else:
            loss = ad.entropy(logits)
        if loss is not None and np.isfinite(loss.data).all():
            self.optimizer.zero_grad()
            loss.backward()
            self.optimizer.step()
        return action

    def _shot_loss(self, logits):
        """H(p_t) - H(mean of last M probability vectors, current included).

        Only the current step's probabilities carry gradient; the history is
        held as constants. With an empty history the marginal equals the
        prediction, the loss is identically zero with zero gradient, so no
        update is performed (covers every step of the M=1 configuration).
        """
        p = ad.softmax(logits)
        n_hist = len(self._shot_hist)
        hist_sum = np.sum(self._shot_hist, axis=0) if n_hist else None
        if self._shot_hist.maxlen:
            self._shot_hist.append(p.data.copy())
        if n_hist == 0:
            return None
        pbar = ad.scale(ad.add(p, Tensor(hist_sum.astype(p.data.dtype))), 1.0 / (n_hist + 1))
        ent_p = ad.entropy(logits)
        ent_marginal = ad.sum_all(ad.mul(pbar, ad.log(pbar)))  # = -H(pbar)
        return ad.add(ent_p, ent_marginal)


def make_agent(config: MethodConfig, bundle: ModelBundle) -> AdaptiveAgent:
    return AdaptiveAgent(config, bundle)
