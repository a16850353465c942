"""Physics-guided residual UNet denoiser (x0-parameterised)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from ..tensor_nn import conv as C
from ..tensor_nn import tensor as T
from ..tensor_nn.nn import Conv2d, Dense, GroupNorm, Module
from ..tensor_nn.tensor import DiffTensor


@dataclass
class PgResUnetConfig:
    base_channels: int = 64
    multipliers: tuple = (1, 2, 4)
    levels: int = 3
    attn_heads: int = 4
    time_embed_dim: int = 256
    in_channels: int = 11
    out_channels: int = 2
    groups: int = 8
    seed: int = 0

    def __post_init__(self):
        self.multipliers = tuple(int(m) for m in self.multipliers)
        if self.levels != len(self.multipliers):
            raise ConfigError("levels must equal the number of channel multipliers")
        if self.in_channels != self.out_channels + 9:
            raise ConfigError("input channels must be the 2 target planes plus 9 condition planes")
        for m in self.multipliers:
            ch = self.base_channels * m
            if ch % self.groups or ch % self.attn_heads:
                raise ConfigError(f"channel count {ch} not divisible by groups/heads")
        if self.time_embed_dim % 2:
            raise ConfigError("time embedding dimension must be even")

    def channels(self, level):
        return self.base_channels * self.multipliers[level]


def toy_config(seed=0) -> PgResUnetConfig:
    return PgResUnetConfig(base_channels=16, seed=seed)


class ResBlock(Module):
    """GN-SiLU-conv twice with the time projection added after the first conv, plus a residual path."""

    def __init__(self, in_ch, out_ch, t_dim, groups, rng):
        self.norm1 = GroupNorm(in_ch, groups)
        self.conv1 = Conv2d(in_ch, out_ch, rng)
        self.time_proj = Dense(t_dim, out_ch, rng)
        self.norm2 = GroupNorm(out_ch, groups)
        self.conv2 = Conv2d(out_ch, out_ch, rng)
        self.skip = Conv2d(in_ch, out_ch, rng, kernel=1) if in_ch != out_ch else None

    def forward(self, x, temb):
        h = self.conv1(T.silu(self.norm1(x)))
        t = self.time_proj(temb)
        h = h + T.reshape(t, t.shape + (1, 1))
        h = self.conv2(T.silu(self.norm2(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class SelfAttention(Module):
    """Multi-head scaled dot-product attention over flattened spatial tokens, residual output."""

    def __init__(self, ch, heads, groups, rng):
        self.norm = GroupNorm(ch, groups)
        self.wq = Dense(ch, ch, rng)
        self.wk = Dense(ch, ch, rng)
        self.wv = Dense(ch, ch, rng)
        self.wo = Dense(ch, ch, rng)
        self.heads = heads
        self.last_weights = None

    def forward(self, x):
        B, ch, H, W = x.shape
        n, h = H * W, self.heads
        d = ch // h
        tokens = T.transpose(T.reshape(self.norm(x), (B, ch, n)), (0, 2, 1))

        def split(t):
            return T.transpose(T.reshape(t, (B, n, h, d)), (0, 2, 1, 3))

        q, k, v = split(self.wq(tokens)), split(self.wk(tokens)), split(self.wv(tokens))
        scores = T.matmul(q, T.swapaxes(k, 2, 3)) * (1.0 / math.sqrt(d))
        attn = T.softmax(scores, axis=-1)
        self.last_weights = attn.data
        out = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (B, n, ch))
        out = self.wo(out)
        return x + T.reshape(T.transpose(out, (0, 2, 1)), (B, ch, H, W))


class PgResUnet(Module):
    def __init__(self, cfg: PgResUnetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        t_dim, g = cfg.time_embed_dim, cfg.groups
        t_hidden = 4 * cfg.base_channels
        self.time_mlp = Dense(t_dim, t_hidden, rng)
        self.stem = Conv2d(cfg.in_channels, cfg.base_channels, rng)
        enc, down = [], []
        ch = cfg.base_channels
        for lvl in range(cfg.levels):
            out = cfg.channels(lvl)
            enc.append(ResBlock(ch, out, t_hidden, g, rng))
            ch = out
            if lvl < cfg.levels - 1:
                down.append(Conv2d(ch, ch, rng, stride=2))
        self.enc, self.down = enc, down
        self.mid1 = ResBlock(ch, ch, t_hidden, g, rng)
        self.attn = SelfAttention(ch, cfg.attn_heads, g, rng)
        self.mid2 = ResBlock(ch, ch, t_hidden, g, rng)
        dec, up = [], []
        for lvl in reversed(range(cfg.levels)):
            out = cfg.channels(lvl)
            dec.append(ResBlock(ch + out, out, t_hidden, g, rng))
            ch = out
            if lvl > 0:
                up.append(Conv2d(ch, cfg.channels(lvl - 1), rng))
                ch = cfg.channels(lvl - 1)
        self.dec, self.up = dec, up
        self.out_norm = GroupNorm(ch, g)
        self.head = Conv2d(ch, cfg.out_channels, rng)

    def forward(self, x_k, k, cond):
        """x_k (B, 2, H, W), k scalar or (B,) steps, cond (B, 9, H, W) -> x0 estimate (B, 2, H, W)."""
        x_k, cond = T.as_tensor(x_k), T.as_tensor(cond)
        B, _, H, W = x_k.shape
        f = 2 ** (self.cfg.levels - 1)
        if H % f or W % f:
            raise ShapeError(f"spatial size {H}x{W} not divisible by {f}")
        if cond.shape != (B, self.cfg.in_channels - 2, H, W):
            raise ShapeError(f"condition shape {cond.shape} does not match input {x_k.shape}")
        ks = np.broadcast_to(np.asarray(k, dtype=float), (B,))
        emb = T.sinusoidal_embedding(ks, self.cfg.time_embed_dim)
        temb = T.silu(self.time_mlp(emb))

        h = self.stem(T.concat([x_k, cond], axis=1))
        skips = []
        for lvl, block in enumerate(self.enc):
            h = block(h, temb)
            skips.append(h)
            if lvl < len(self.down):
                h = self.down[lvl](h)
        h = self.mid2(self.attn(self.mid1(h, temb)), temb)
        for i, block in enumerate(self.dec):
            h = block(T.concat([h, skips.pop()], axis=1), temb)
            if i < len(self.up):
                h = self.up[i](C.upsample_nearest(h))
        return self.head(T.silu(self.out_norm(h)))

    def attention_weights(self):
        return self.attn.last_weights


def predict_x0(model: PgResUnet):
    """Adapter for the sampler: numpy in, numpy out, no graph recorded."""
    def fn(x, k, cond):
        with T.no_grad():
            return model(DiffTensor(x), k, DiffTensor(cond)).data
    return fn
