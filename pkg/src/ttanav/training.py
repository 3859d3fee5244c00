"""Replay collection, behavior cloning, and decoder training."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import sim
from .autodiff import Tensor
from .episodes import EpisodeSpec, Observation, run_episode
from .model import Decoder, Encoder, Policy, make_policy_input
from .norm import Mode, norm_layers
from .optim import Adam
from .sim import STOP


@dataclass
class ReplayDataset:
    """Oracle-driven navigation experience: clean frames + expert labels.

    frames are stored quantized (uint8) to keep memory flat; ``frame(i)``
    returns the float image. ``executed`` differs from ``label`` where
    exploration noise replaced the expert action.
    """

    frames: np.ndarray     # (N, H, W, 3) uint8
    goals: np.ndarray      # (N, 2) float32: range meters, bearing radians
    labels: np.ndarray     # (N,) int8 oracle actions
    executed: np.ndarray   # (N,) int8 actions actually taken
    episode_id: np.ndarray  # (N,) int32

    def __len__(self):
        return len(self.labels)

    def frame(self, i) -> np.ndarray:
        return self.frames[i].astype(np.float32) / 255.0

    def save(self, path):
        np.savez_compressed(path, frames=self.frames, goals=self.goals,
                            labels=self.labels, executed=self.executed,
                            episode_id=self.episode_id)

    @classmethod
    def load(cls, path):
        z = np.load(path)
        return cls(z["frames"], z["goals"], z["labels"], z["executed"], z["episode_id"])


def collect_replay(scene_cache, episodes, n_frames: int, seed: int,
                   noise_rate: float = 0.1, resolution: int = 64) -> ReplayDataset:
    """Roll the shortest-path oracle with action-noise injection.

    Every step stores (clean frame, goal vector, oracle label, executed
    action). With probability ``noise_rate`` a uniformly random action is
    executed instead of the expert's (the expert label is still stored);
    a noise-injected stop does not end the episode. Episodes cycle until
    exactly ``n_frames`` records exist.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    frames, goals, labels, executed, epids = [], [], [], [], []
    ep_counter = 0
    while len(frames) < n_frames:
        for episode in episodes:
            if len(frames) >= n_frames:
                break
            scene = scene_cache.get(episode.scene_seed)
            pose = sim.Pose(*episode.start)
            for _ in range(sim.MAX_STEPS):
                if len(frames) >= n_frames:
                    break
                frame = sim.render(scene, pose, resolution)
                r, phi = sim.gps_compass(pose, episode.goal)
                label = sim.oracle_action(scene, pose, episode.goal)
                action = label
                if rng.uniform() < noise_rate:
                    action = int(rng.integers(0, 4))
                frames.append(np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8))
                goals.append((r, phi))
                labels.append(label)
                executed.append(action)
                epids.append(ep_counter)
                if label == STOP and action == STOP:
                    break
                if action != STOP:
                    pose, _, _ = sim.step(scene, pose, action)
            ep_counter += 1
    return ReplayDataset(
        np.stack(frames),
        np.array(goals, dtype=np.float32),
        np.array(labels, dtype=np.int8),
        np.array(executed, dtype=np.int8),
        np.array(epids, dtype=np.int32),
    )


def _append_csv(path, row, header):
    if path is None:
        return
    new = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(header)
        w.writerow(row)


def _window_starts(replay: ReplayDataset, window: int):
    """Indices where a full window fits inside one episode."""
    epid = replay.episode_id
    ok = np.nonzero(epid[: len(epid) - window + 1] == epid[window - 1 :])[0]
    return ok


def train_policy_bc(replay: ReplayDataset, encoder: Encoder, policy: Policy,
                    epochs: int = 4, batch_size: int = 8, window: int = 16,
                    lr: float = 1e-3, seed: int = 0, metrics_csv=None,
                    log_every: int = 50):
    """Behavior cloning on oracle labels with truncated BPTT.

    Encoder norm layers run in Train mode so the running statistics absorb
    the clean-domain distribution (they become the frozen/adaptation-initial
    statistics at test time). Windows are unrolled with a zero recurrent
    state; the previous-action input replays the executed (possibly noisy)
    action, falling back to stop at episode starts.
    """
    rng = np.random.default_rng(seed)
    for _, layer in norm_layers(encoder):
        layer.mode = Mode.TRAIN
        layer.momentum = 0.1
    params = encoder.parameters() + policy.parameters()
    for p in params:
        p.requires_grad = True
    opt = Adam(params, lr=lr)
    starts = _window_starts(replay, window)
    if len(starts) == 0:
        raise ValueError("replay has no full training windows")
    step_idx = 0
    last = {}
    for epoch in range(epochs):
        order = rng.permutation(len(starts))
        for ofs in range(0, len(order) - batch_size + 1, batch_size):
            s = starts[order[ofs : ofs + batch_size]]
            idx = (s[:, None] + np.arange(window)[None, :]).reshape(-1)  # (B*W,)
            imgs = np.stack([replay.frame(i) for i in idx]).transpose(0, 3, 1, 2)
            x = Tensor(np.ascontiguousarray(imgs, dtype=np.float32))
            _, e_all = encoder(x)  # (B*W, 128)

            b = len(s)
            h = policy.initial_state(b)
            logits_steps = []
            for t in range(window):
                rows = np.arange(b) * window + t
                e_t = ad.gather_rows(e_all, rows)
                frame_ids = idx[rows]
                gv = np.stack([Policy.encode_goal(*replay.goals[i]) for i in frame_ids])
                prev = np.where(
                    (frame_ids > 0) & (replay.episode_id[np.maximum(frame_ids - 1, 0)] == replay.episode_id[frame_ids]),
                    replay.executed[np.maximum(frame_ids - 1, 0)],
                    STOP,
                )
                onehot = np.zeros((b, 4), dtype=np.float32)
                onehot[np.arange(b), prev] = 1.0
                x_t = ad.concat([e_t, Tensor(gv.astype(np.float32)), Tensor(onehot)], axis=1)
                logits, h = policy.step(x_t, h)
                logits_steps.append(logits)
            all_logits = ad.concat(logits_steps, axis=0)  # (W*B,) stacked by step
            label_idx = np.concatenate([idx[np.arange(b) * window + t] for t in range(window)])
            loss = ad.cross_entropy(all_logits, replay.labels[label_idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError("behavior cloning diverged (non-finite loss)")
            opt.zero_grad()
            loss.backward()
            opt.step()
            acc = float(np.mean(np.argmax(all_logits.data, axis=1) == replay.labels[label_idx]))
            last = {"loss": float(loss.data), "acc": acc}
            if step_idx % log_every == 0:
                _append_csv(metrics_csv, [step_idx, float(loss.data), lr, acc],
                            ["step", "loss", "lr", "accuracy"])
            step_idx += 1
    for p in params:
        p.requires_grad = False
    return last


def encode_frames(encoder: Encoder, images: np.ndarray, batch: int = 32) -> np.ndarray:
    """Frozen-encoder block-3 features for (N, H, W, 3) float images."""
    feats = []
    with ad.no_grad():
        for ofs in range(0, len(images), batch):
            chunk = images[ofs : ofs + batch].transpose(0, 3, 1, 2)
            z = encoder.features(Tensor(np.ascontiguousarray(chunk, dtype=np.float32)))
            feats.append(z.data)
    return np.concatenate(feats, axis=0)


def train_decoder(replay: ReplayDataset, encoder: Encoder, decoder: Decoder,
                  steps: int = 3000, batch_size: int = 16, lr: float = 2e-4,
                  ema_decay: float = 0.9999, seed: int = 0, holdout_frac: float = 0.1,
                  metrics_csv=None, log_every: int = 100):
    """MSE reconstruction training against the frozen encoder's features.

    The encoder must already carry clean running statistics; its parameters
    and statistics are not touched (checked by the caller via state_dict
    comparison). Returns (final train loss, holdout MSE, mean-image MSE).
    Decoder weights are replaced by the debiased EMA average at the end.
    """
    if len(replay) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    for _, layer in norm_layers(encoder):
        layer.mode = Mode.FROZEN
    for p in encoder.parameters():
        p.requires_grad = False
    for _, layer in norm_layers(decoder):
        layer.mode = Mode.TRAIN
        layer.momentum = 0.1
    for p in decoder.parameters():
        p.requires_grad = True

    n_hold = max(1, int(len(replay) * holdout_frac))
    train_idx = np.arange(0, len(replay) - n_hold)
    hold_idx = np.arange(len(replay) - n_hold, len(replay))
    opt = Adam(decoder.parameters(), lr=lr, ema_decay=ema_decay)
    loss_val = None
    for it in range(steps):
        ids = rng.choice(train_idx, size=batch_size, replace=False)
        imgs = np.stack([replay.frame(i) for i in ids])
        with ad.no_grad():
            z = encoder.features(Tensor(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2))))
        target = Tensor(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2)))
        recon = decoder(Tensor(z.data))
        loss = ad.mse_loss(recon, target)
        if not np.isfinite(loss.data):
            raise FloatingPointError("decoder training diverged (non-finite loss)")
        opt.zero_grad()
        loss.backward()
        opt.step()
        loss_val = float(loss.data)
        if it % log_every == 0:
            _append_csv(metrics_csv, [it, loss_val, lr], ["step", "loss", "lr"])

    for p, ema in zip(decoder.parameters(), opt.ema_params()):
        p.data[...] = ema.astype(p.data.dtype)
    for _, layer in norm_layers(decoder):
        layer.mode = Mode.FROZEN
    for p in decoder.parameters():
        p.requires_grad = False

    hold_imgs = np.stack([replay.frame(i) for i in hold_idx])
    hold_mse = reconstruction_mse(encoder, decoder, hold_imgs)
    mean_img = np.mean(np.stack([replay.frame(i) for i in train_idx[:2000]]), axis=0)
    base_mse = float(np.mean((hold_imgs - mean_img[None]) ** 2))
    return loss_val, hold_mse, base_mse


def reconstruction_mse(encoder: Encoder, decoder: Decoder, images: np.ndarray, batch: int = 32) -> float:
    """Mean squared reconstruction error of the (frozen) autoencoder path."""
    total, count = 0.0, 0
    with ad.no_grad():
        for ofs in range(0, len(images), batch):
            chunk = images[ofs : ofs + batch].transpose(0, 3, 1, 2).astype(np.float32)
            z = encoder.features(Tensor(np.ascontiguousarray(chunk)))
            recon = decoder(z)
            total += float(np.sum((recon.data - chunk) ** 2))
            count += chunk.size
    return total / count


def greedy_rollout_sr(scene_cache, episodes, encoder: Encoder, policy: Policy,
                      resolution: int = 64) -> float:
    """Deterministic rollout success rate of the frozen policy on clean frames."""
    from .agents import AdaptiveAgent, MethodConfig, ModelBundle

    bundle = ModelBundle(encoder.state_dict(), policy.state_dict())
    agent = AdaptiveAgent(MethodConfig("no_adapt"), bundle)
    succ = 0
    for ep in episodes:
        res = run_episode(scene_cache.get(ep.scene_seed), ep, agent, resolution=resolution)
        succ += res.success
    return succ / len(episodes)
