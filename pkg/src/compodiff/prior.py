"""Masked diffusion prior over the latent stack.

Each latent is independently either noised (mask bit 1) or left clean (0).
The denoiser sees the partially blended stack, the noise level and the mask,
and predicts the whole clean stack. The same network therefore serves
unconditional generation (all bits 1) and conditional generation of some
latents given the others.

Draw order for the loss is alpha (one per row), then z0, then the mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .compose import LatentStack, TrainConfig, fit, parameter_checksum
from .diffusion import SamplerConfig, _bcast, iadb_sample, squared_error
from .networks import UNet1d, UNetConfig
from .numerics import Tensor, as_tensor
from .numerics.nn import Module

log = logging.getLogger(__name__)

DEFAULT_P_MASK = 0.8


@dataclass
class Mask:
    """Per-latent mask broadcast to the N x L_z stack shape (1 = generate)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.float64)
        if bits.ndim < 2:
            raise ValueError("mask bits must be at least N x L_z")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask bits must be 0 or 1")
        if np.any(bits.min(axis=-1) != bits.max(axis=-1)):
            raise ValueError("each latent must be masked as a whole")
        self.bits = bits

    @property
    def per_latent(self) -> np.ndarray:
        return self.bits[..., 0]

    @classmethod
    def from_latents(cls, flags: Sequence[int], latent_dim: int) -> "Mask":
        flags = np.asarray(flags, dtype=np.float64)
        return cls(np.repeat(flags[..., None], latent_dim, axis=-1))


def make_mask(n: int, p_mask: float, rng: np.random.Generator, latent_dim: int = 1,
              rows: int | None = None) -> Mask:
    """Mask each of ``n`` latents independently with probability ``p_mask``."""
    if not 0.0 <= p_mask <= 1.0:
        raise ValueError(f"p_mask must lie in [0, 1], got {p_mask}")
    shape = (n,) if rows is None else (rows, n)
    flags = (rng.uniform(size=shape) < p_mask).astype(np.float64)
    return Mask.from_latents(flags, latent_dim)


def masked_blend(z, z0, alpha, m: Mask) -> np.ndarray:
    """Blend masked latents toward ``z`` at level ``alpha``; copy the rest.

    Unmasked positions are selected, not computed, so they equal ``z``
    bitwise.
    """
    z = np.asarray(z.array() if isinstance(z, LatentStack) else as_tensor(z).data)
    z0 = np.asarray(as_tensor(z0).data)
    if z.shape != z0.shape or z.shape != m.bits.shape:
        raise ValueError(f"shape mismatch: z {z.shape}, z0 {z0.shape}, mask {m.bits.shape}")
    alpha = np.asarray(alpha, dtype=np.float64)
    blended = (1.0 - alpha) * z0 + alpha * z
    return np.where(m.bits == 1, blended, z)


@dataclass
class PriorConfig:
    n_latents: int = 2
    latent_dim: int = 64
    channels: int = 32
    groups: int = 8
    attention: bool = False
    p_mask: float = DEFAULT_P_MASK


class PriorModel(Module):
    """U-Net over the N x L_z stack; the mask enters as N extra channels.

    Latents are standardised with a scalar ``center``/``scale`` fitted by
    :func:`train_prior`; the network only ever sees standardised values.
    """

    def __init__(self, config: PriorConfig, rng: np.random.Generator):
        self.config = config
        self.net = UNet1d(UNetConfig(config.n_latents, config.n_latents, config.n_latents,
                                     config.channels, config.groups, attention=config.attention), rng)
        self.center = 0.0
        self.scale = 1.0

    def forward(self, z_alpha: Tensor, alpha, mask) -> Tensor:
        bits = mask.bits if isinstance(mask, Mask) else np.asarray(as_tensor(mask).data)
        return self.net(as_tensor(z_alpha), alpha, Tensor(bits))

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return (z - self.center) / self.scale

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.center


def build_prior(config: PriorConfig, seed: int = 0) -> PriorModel:
    return PriorModel(config, np.random.default_rng(seed))


def prior_loss(model: Callable, z, rng: np.random.Generator, p_mask: float = DEFAULT_P_MASK) -> Tensor:
    """``||z - model(z_alpha, alpha, m)||^2`` over every position of the stack."""
    z = np.asarray(z.array() if isinstance(z, LatentStack) else as_tensor(z).data)
    batched = z.ndim == 3
    rows = z.shape[0] if batched else 1
    alpha = rng.uniform(0.0, 1.0, size=rows)
    z0 = rng.standard_normal(z.shape)
    m = make_mask(z.shape[-2], p_mask, rng, z.shape[-1], rows if batched else None)
    za = masked_blend(z, z0, _bcast(alpha, Tensor(z)), m)
    pred = model(Tensor(za), alpha if batched else float(alpha[0]), m)
    return squared_error(pred, z)


def _stack_array(latents) -> np.ndarray:
    if isinstance(latents, np.ndarray):
        arr = latents
    else:
        arr = np.stack([s.array() if isinstance(s, LatentStack) else np.asarray(s) for s in latents])
    if arr.ndim != 3:
        raise ValueError(f"expected M x N x L_z latents, got shape {arr.shape}")
    return arr.astype(np.float64)


def train_prior(model: PriorModel, latents, config: TrainConfig, encoder: Module | None = None,
                on_epoch: Callable | None = None) -> tuple[PriorModel, list[float]]:
    """Fit the prior on precomputed latents from a frozen encoder.

    If ``encoder`` is given its parameter checksum is compared before and
    after training.
    """
    data = _stack_array(latents)
    before = parameter_checksum(encoder) if encoder is not None else None
    model.center = float(data.mean())
    model.scale = float(data.std()) or 1.0
    norm = model.normalize(data)
    p = model.config.p_mask
    trace = fit(model.parameters(), lambda b, r: prior_loss(model, b, r, p), norm, config, on_epoch)
    if encoder is not None and parameter_checksum(encoder) != before:
        raise RuntimeError("encoder parameters changed during prior training")
    return model, trace


def generate_many(model: PriorModel, known: np.ndarray, bits: np.ndarray, steps: int = 100,
                  seeds: Sequence[int] = (0,), trace: list | None = None) -> np.ndarray:
    """Batched conditional sampling over B x N x L_z stacks.

    Row ``b`` starts from ``default_rng(seeds[b])``; positions where ``bits``
    is 0 are re-clamped to ``known`` after every step and copied verbatim
    into the result.
    """
    known = np.asarray(known, dtype=np.float64)
    bits = np.asarray(bits, dtype=np.float64)
    if known.shape != bits.shape or known.ndim != 3 or len(seeds) != known.shape[0]:
        raise ValueError("known, bits and seeds must describe the same B x N x L_z batch")
    keep = bits == 0
    z_norm = model.normalize(known)
    x0 = np.stack([np.random.default_rng(s).standard_normal(known.shape[1:]) for s in seeds])
    cond = Tensor(bits)

    def clamp(state: np.ndarray) -> np.ndarray:
        return np.where(keep, z_norm, state)

    norm_trace = [] if trace is not None else None
    out = iadb_sample(lambda x, a, _: model(x, a, cond), clamp(x0), SamplerConfig(steps),
                      project=clamp, trace=norm_trace)
    if trace is not None:
        trace.extend(np.where(keep, known, model.denormalize(s)) for s in norm_trace)
    return np.where(keep, known, model.denormalize(out.data))


def generate(model: PriorModel, known: tuple | None = None, steps: int = 100, seed: int = 0,
             trace: list | None = None) -> LatentStack:
    """Sample a latent stack; with ``known=(stack, mask)`` only masked latents
    are generated and the kept ones are re-clamped after every step."""
    cfg = model.config
    shape = (cfg.n_latents, cfg.latent_dim)
    if known is None:
        z_known, bits = np.zeros(shape), np.ones(shape)
    else:
        stack, mask = known
        z_known = stack.array() if isinstance(stack, LatentStack) else np.asarray(stack, dtype=np.float64)
        bits = mask.bits
        if z_known.shape != shape or bits.shape != shape:
            raise ValueError(f"known stack and mask must be {shape}")
    inner = [] if trace is not None else None
    out = generate_many(model, z_known[None], bits[None], steps, [seed], inner)
    if trace is not None:
        trace.extend(s[0] for s in inner)
    return LatentStack.from_array(out[0])
