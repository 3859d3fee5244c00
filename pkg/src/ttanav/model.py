"""Desk-scale networks: convolutional encoder, top-down decoder, recurrent policy.

The encoder has three named downsampling blocks (strides 2, widths 16/32/64,
each a strided conv + residual unit + squeeze-excitation, every conv followed
by a norm layer) and a norm-free head (global average pool + dense to a
128-d embedding). Block 3 emits 8x8x64 features; the decoder mirrors the
encoder with three nearest-neighbor-upsample residual stages (64->32->16->8)
and a sigmoid RGB output at 64x64. The policy is a 128-unit gated recurrent
cell over [embedding, goal vector encoding, previous-action one-hot].
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module, param
from .norm import BatchNorm2d

EMBED_DIM = 128
HIDDEN_DIM = 128
N_ACTIONS = 4
FRAME_SIZE = 64
GOAL_RANGE_SCALE = 5.0  # meters mapped to ~unit scale for the recurrent cell


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride, pad, rng):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.w = param((cout, cin, k, k), rng, fan_in=cin * k * k)
        self.b = param((cout,), rng, kind="zero")

    def forward(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Dense(Module):
    def __init__(self, din, dout, rng):
        super().__init__()
        self.w = param((din, dout), rng, fan_in=din)
        self.b = param((dout,), rng, kind="zero")

    def forward(self, x):
        return ad.dense(x, self.w, self.b)


class SqueezeExcite(Module):
    """Channel gating: GAP -> dense C->C/4 -> relu -> dense -> sigmoid -> scale."""

    def __init__(self, channels, rng):
        super().__init__()
        hidden = max(4, channels // 4)
        self.fc1 = Dense(channels, hidden, rng)
        self.fc2 = Dense(hidden, channels, rng)

    def forward(self, x):
        s = ad.global_avg_pool(x)
        s = ad.sigmoid(self.fc2(ad.relu(self.fc1(s))))
        n, c = s.data.shape
        return ad.mul(x, ad.reshape(s, (n, c, 1, 1)))


class ResidualUnit(Module):
    """y = relu(x + bn(conv(x))), channel-preserving."""

    def __init__(self, channels, rng):
        super().__init__()
        self.conv = Conv2d(channels, channels, 3, 1, 1, rng)
        self.bn = BatchNorm2d(channels)

    def forward(self, x):
        return ad.relu(ad.add(x, self.bn(self.conv(x))))


class EncoderBlock(Module):
    def __init__(self, cin, cout, rng, se=True):
        super().__init__()
        # 4x4 stride-2 pad-1 halves even extents exactly
        self.down = Conv2d(cin, cout, 4, 2, 1, rng)
        self.bn = BatchNorm2d(cout)
        self.res = ResidualUnit(cout, rng)
        self.se = SqueezeExcite(cout, rng) if se else None

    def forward(self, x):
        x = ad.relu(self.bn(self.down(x)))
        x = self.res(x)
        if self.se is not None:
            x = self.se(x)
        return x


class EncoderHead(Module):
    """Norm-free: batch-1 statistics over a 1x1 spatial extent are degenerate."""

    def __init__(self, rng):
        super().__init__()
        self.fc = Dense(64, EMBED_DIM, rng)

    def forward(self, z):
        return ad.relu(self.fc(ad.global_avg_pool(z)))


class Encoder(Module):
    def __init__(self, seed: int = 0, se: bool = True):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.block1 = EncoderBlock(3, 16, rng, se)
        self.block2 = EncoderBlock(16, 32, rng, se)
        self.block3 = EncoderBlock(32, 64, rng, se)
        self.head = EncoderHead(rng)

    def forward(self, img: Tensor):
        """img NCHW in [0,1] -> (z: (N,64,8,8) block-3 features, e: (N,128))."""
        if img.data.ndim != 4 or img.data.shape[1:] != (3, FRAME_SIZE, FRAME_SIZE):
            raise ValueError(f"encoder expects (N,3,{FRAME_SIZE},{FRAME_SIZE}), got {img.data.shape}")
        z = self.block3(self.block2(self.block1(img)))
        return z, self.head(z)

    def features(self, img: Tensor):
        return self.block3(self.block2(self.block1(img)))

    def embed_from_features(self, z: Tensor):
        return self.head(z)


class DecoderStage(Module):
    """Upsample x2 then a residual block with a 1x1-projected skip."""

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.conv = Conv2d(cin, cout, 3, 1, 1, rng)
        self.bn = BatchNorm2d(cout)
        self.skip = Conv2d(cin, cout, 1, 1, 0, rng)
        self.bn_skip = BatchNorm2d(cout)

    def forward(self, x):
        x = ad.upsample2_nearest(x)
        return ad.relu(ad.add(self.bn(self.conv(x)), self.bn_skip(self.skip(x))))


class Decoder(Module):
    def __init__(self, seed: int = 1):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.stage1 = DecoderStage(64, 32, rng)
        self.stage2 = DecoderStage(32, 16, rng)
        self.stage3 = DecoderStage(16, 8, rng)
        self.out = Conv2d(8, 3, 3, 1, 1, rng)

    def forward(self, z: Tensor) -> Tensor:
        """z (N,64,8,8) -> reconstruction (N,3,64,64) in (0,1)."""
        if z.data.ndim != 4 or z.data.shape[1:] != (64, 8, 8):
            raise ValueError(f"decoder expects (N,64,8,8), got {z.data.shape}")
        return ad.sigmoid(self.out(self.stage3(self.stage2(self.stage1(z)))))


class Policy(Module):
    """Gated recurrent cell (128) + action head over 4 logits.

    Input per step: [e (128), r/5, cos phi, sin phi, prev-action one-hot (4)].
    """

    IN_DIM = EMBED_DIM + 3 + N_ACTIONS

    def __init__(self, seed: int = 2):
        super().__init__()
        rng = np.random.default_rng(seed)
        d, hd = self.IN_DIM, HIDDEN_DIM
        s = 1.0 / np.sqrt(hd)

        def u(shape):
            return Tensor(rng.uniform(-s, s, size=shape).astype(np.float32), requires_grad=True)

        self.wz, self.uz, self.bz = u((d, hd)), u((hd, hd)), u((hd,))
        self.wr, self.ur, self.br = u((d, hd)), u((hd, hd)), u((hd,))
        self.wn, self.un, self.bn = u((d, hd)), u((hd, hd)), u((hd,))
        self.head = Dense(hd, N_ACTIONS, rng)

    def initial_state(self, batch: int = 1) -> Tensor:
        return Tensor(np.zeros((batch, HIDDEN_DIM), dtype=np.float32))

    @staticmethod
    def encode_goal(r: float, phi: float) -> np.ndarray:
        return np.array([r / GOAL_RANGE_SCALE, np.cos(phi), np.sin(phi)], dtype=np.float32)

    def step(self, x: Tensor, h: Tensor):
        """One recurrent update: x (N, IN_DIM), h (N, 128) -> (logits, h')."""
        z = ad.sigmoid(ad.add(ad.dense(x, self.wz, self.bz), ad.matmul(h, self.uz)))
        r = ad.sigmoid(ad.add(ad.dense(x, self.wr, self.br), ad.matmul(h, self.ur)))
        n = ad.tanh(ad.add(ad.dense(x, self.wn, self.bn), ad.mul(r, ad.matmul(h, self.un))))
        one = Tensor(np.ones_like(z.data))
        h_new = ad.add(ad.mul(ad.sub(one, z), h), ad.mul(z, n))
        return self.head(h_new), h_new


def make_policy_input(e: Tensor, goal_feats: np.ndarray, prev_action: int) -> Tensor:
    onehot = np.zeros((e.data.shape[0], N_ACTIONS), dtype=np.float32)
    onehot[:, prev_action] = 1.0
    gf = np.broadcast_to(goal_feats.astype(np.float32), (e.data.shape[0], 3))
    return ad.concat([e, Tensor(np.array(gf)), Tensor(onehot)], axis=1)


def frame_to_tensor(img: np.ndarray) -> Tensor:
    """(H,W,3) float image -> (1,3,H,W) float32 tensor."""
    return Tensor(np.ascontiguousarray(img.transpose(2, 0, 1)[None]).astype(np.float32))
