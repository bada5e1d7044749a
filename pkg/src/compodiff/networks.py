"""1-D U-Net denoiser and convolutional semantic encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, concat, silu, sinusoidal_embedding, upsample_nearest
from .numerics import functional as F
from .numerics.nn import Conv1d, GroupNorm, Linear, Module, SelfAttention


@dataclass
class UNetConfig:
    in_channels: int = 4
    cond_channels: int = 1
    out_channels: int | None = None
    channels: int = 32
    groups: int = 8
    frequencies: int = 64
    attention: bool = False
    zero_init_output: bool = True

    def __post_init__(self):
        if self.out_channels is None:
            self.out_channels = self.in_channels
        if self.channels % self.groups:
            raise ValueError("channels must be divisible by groups")


class ResBlock(Module):
    """GroupNorm/SiLU/conv block; with ``emb_dim`` the second norm is AdaGN."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, groups: int,
                 emb_dim: int | None = None):
        self.norm1 = GroupNorm(groups, c_in)
        self.conv1 = Conv1d(c_in, c_out, 3, rng)
        self.norm2 = GroupNorm(groups, c_out)
        self.film = Linear(emb_dim, 2 * c_out, rng) if emb_dim else None
        self.conv2 = Conv1d(c_out, c_out, 3, rng)
        self.skip = Conv1d(c_in, c_out, 1, rng) if c_in != c_out else None
        self.c_out = c_out

    def forward(self, x: Tensor, emb: Tensor | None = None) -> Tensor:
        h = self.norm2(self.conv1(silu(self.norm1(x))))
        if self.film is not None:
            ss = self.film(emb)  # B x 2C
            scale = ss[:, : self.c_out].reshape(-1, self.c_out, 1)
            shift = ss[:, self.c_out:].reshape(-1, self.c_out, 1)
            h = h * (scale + 1.0) + shift
        h = self.conv2(silu(h))
        return h + (self.skip(x) if self.skip is not None else x)


class UNet1d(Module):
    """Two-level U-Net over B x C x L inputs conditioned on a noise level.

    ``L`` must be divisible by 4. Conditioning channels (already length
    matched) are concatenated to the input.
    """

    def __init__(self, config: UNetConfig, rng: np.random.Generator):
        c, g = config.channels, config.groups
        e = 4 * c
        self.config = config
        self.emb1 = Linear(2 * config.frequencies, e, rng)
        self.emb2 = Linear(e, e, rng)
        self.inp = Conv1d(config.in_channels + config.cond_channels, c, 3, rng)
        self.block1 = ResBlock(c, c, rng, g, e)
        self.down1 = Conv1d(c, c, 3, rng, stride=2)
        self.block2 = ResBlock(c, 2 * c, rng, g, e)
        self.down2 = Conv1d(2 * c, 2 * c, 3, rng, stride=2)
        self.block3 = ResBlock(2 * c, 2 * c, rng, g, e)
        self.attn = SelfAttention(2 * c, rng, g) if config.attention else None
        self.up2 = Conv1d(2 * c, 2 * c, 3, rng)
        self.block4 = ResBlock(4 * c, 2 * c, rng, g, e)
        self.up1 = Conv1d(2 * c, c, 3, rng)
        self.block5 = ResBlock(2 * c, c, rng, g, e)
        self.norm_out = GroupNorm(g, c)
        self.out = Conv1d(c, config.out_channels, 3, rng)
        if config.zero_init_output:
            self.out.weight = Tensor(np.zeros(self.out.weight.shape), requires_grad=True)

    def embed(self, alpha) -> Tensor:
        pe = Tensor(sinusoidal_embedding(alpha, self.config.frequencies))
        return self.emb2(silu(self.emb1(pe)))

    def forward(self, x: Tensor, alpha, cond: Tensor | None = None) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
            cond = cond.reshape(1, *cond.shape) if cond is not None else None
        if x.shape[-1] % 4:
            raise ValueError(f"sequence length {x.shape[-1]} must be divisible by 4")
        alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (x.shape[0],))
        emb = self.embed(alpha)
        h = x if cond is None else concat([x, cond], axis=1)
        h0 = self.block1(self.inp(h), emb)
        h1 = self.block2(self.down1(h0), emb)
        h2 = self.block3(self.down2(h1), emb)
        if self.attn is not None:
            h2 = self.attn(h2)
        u = self.block4(concat([self.up2(upsample_nearest(h2, 2)), h1], axis=1), emb)
        u = self.block5(concat([self.up1(upsample_nearest(u, 2)), h0], axis=1), emb)
        out = self.out(silu(self.norm_out(u)))
        return out.reshape(out.shape[1:]) if squeeze else out


@dataclass
class EncoderConfig:
    in_channels: int = 4
    length: int = 128
    channels: int = 32
    groups: int = 8
    n_latents: int = 2
    latent_dim: int = 64

    def __post_init__(self):
        half = self.length // 2
        if self.length % 2 or half % self.latent_dim:
            raise ValueError(f"latent_dim {self.latent_dim} must divide length/2 = {half}")


class SemanticEncoder(Module):
    """Conv stack with one stride-2 downsampling and a pointwise affine head
    emitting ``n_latents`` rows of length ``latent_dim``."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        c = config.channels
        self.config = config
        self.inp = Conv1d(config.in_channels, c, 3, rng)
        self.block1 = ResBlock(c, c, rng, config.groups)
        self.down = Conv1d(c, c, 3, rng, stride=2)
        self.block2 = ResBlock(c, c, rng, config.groups)
        self.norm = GroupNorm(config.groups, c)
        self.head = Linear(c, config.n_latents, rng)

    def forward(self, x: Tensor) -> Tensor:
        """B x C x L -> B x N x latent_dim."""
        cfg = self.config
        if x.shape[1:] != (cfg.in_channels, cfg.length):
            raise ValueError(f"encoder expects B x {cfg.in_channels} x {cfg.length}, got {x.shape}")
        h = silu(self.norm(self.block2(self.down(self.block1(self.inp(x))))))
        pool = h.shape[-1] // cfg.latent_dim
        if pool > 1:
            h = h.reshape(h.shape[0], h.shape[1], cfg.latent_dim, pool).mean(axis=3)
        return F.affine(h.swapaxes(1, 2), self.head.weight, self.head.bias).swapaxes(1, 2)
