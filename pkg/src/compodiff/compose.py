"""Compositional decomposition model.

An encoder maps a mixture to N latents; one parameter-shared conditional
denoiser renders each latent in data space; a fixed composition operator
merges the N renderings. Training is end-to-end through the IADB loss of the
composed prediction. Decoding each latent on its own yields a source estimate.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffusion import SamplerConfig, _bcast, draw_blend, iadb_blend, iadb_sample, squared_error
from .networks import EncoderConfig, SemanticEncoder, UNet1d, UNetConfig
from .numerics import AdamW, Tensor, as_tensor, backward, no_grad, resize_nearest, stack
from .numerics.tensor import make_result
from .numerics.nn import Module

log = logging.getLogger(__name__)

OPERATORS = ("sum", "mean", "min", "max")


class TrainingDiverged(RuntimeError):
    pass


def compose(op: str, parts: Sequence[Tensor]) -> Tensor:
    """Elementwise sum/mean/min/max over the N parts.

    Sums are taken over the parts sorted elementwise, so the result is
    bitwise independent of the order of ``parts``.
    """
    if op not in OPERATORS:
        raise ValueError(f"unknown composition operator {op!r}; expected one of {OPERATORS}")
    if len(parts) == 0:
        raise ValueError("compose needs at least one part")
    stacked = stack([as_tensor(p) for p in parts])
    if op == "max":
        return stacked.max(axis=0)
    if op == "min":
        return stacked.min(axis=0)
    n = stacked.shape[0]
    total = np.sort(stacked.data, axis=0).sum(axis=0) if n > 1 else stacked.data[0]
    out = make_result(total, (stacked,), lambda g: (np.broadcast_to(g, stacked.shape).copy(),), "compose_sum")
    return out * (1.0 / n) if op == "mean" else out


@dataclass
class LatentStack:
    latents: list[np.ndarray]

    def __post_init__(self):
        if not self.latents:
            raise ValueError("a latent stack holds at least one latent")
        shape = self.latents[0].shape
        if any(z.shape != shape for z in self.latents):
            raise ValueError("all latents must share one shape")

    @property
    def n(self) -> int:
        return len(self.latents)

    def array(self) -> np.ndarray:
        """N x L_z array (each latent is 1 x L_z)."""
        return np.concatenate(self.latents, axis=0)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "LatentStack":
        return cls([arr[i:i + 1].copy() for i in range(arr.shape[0])])


@dataclass
class ModelConfig:
    data_channels: int = 4
    length: int = 128
    n_latents: int = 2
    latent_dim: int = 64
    channels: int = 32
    groups: int = 8
    attention: bool = False
    operator: str = "mean"
    zero_init_output: bool = True

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}")
        if self.n_latents < 1:
            raise ValueError("n_latents must be >= 1")


class DecompositionModel(Module):
    """Encoder + shared conditional denoiser + composition operator.

    ``denoiser(x_alpha, alpha, cond)`` receives the latent length-matched to
    the data as one extra channel.
    """

    def __init__(self, encoder: Callable, denoiser: Callable, operator: str = "mean",
                 n_latents: int | None = None, length: int | None = None):
        if operator not in OPERATORS:
            raise ValueError(f"unknown operator {operator!r}")
        self.encoder = encoder
        self.denoiser = denoiser
        self.operator = operator
        self.n_latents = n_latents if n_latents is not None else encoder.config.n_latents
        self.length = length if length is not None else encoder.config.length

    def encode_batch(self, x) -> Tensor:
        x = as_tensor(x)
        return self.encoder(x if x.ndim == 3 else x.reshape(1, *x.shape))

    def condition(self, z_i: Tensor) -> Tensor:
        """B x 1 x L_z latent -> B x 1 x L by nearest-neighbour repetition."""
        return resize_nearest(z_i, self.length)

    def render(self, x_alpha: Tensor, alpha, z_i: Tensor) -> Tensor:
        return self.denoiser(x_alpha, alpha, self.condition(z_i))

    def composed(self, x_alpha: Tensor, alpha, z: Tensor) -> Tensor:
        parts = [self.render(x_alpha, alpha, z[:, i:i + 1]) for i in range(z.shape[1])]
        return compose(self.operator, parts)


def build_model(config: ModelConfig, seed: int = 0) -> DecompositionModel:
    rng = np.random.default_rng(seed)
    enc = SemanticEncoder(EncoderConfig(config.data_channels, config.length, config.channels,
                                        config.groups, config.n_latents, config.latent_dim), rng)
    den = UNet1d(UNetConfig(config.data_channels, 1, None, config.channels, config.groups,
                            attention=config.attention, zero_init_output=config.zero_init_output), rng)
    return DecompositionModel(enc, den, config.operator)


def encode(model: DecompositionModel, x) -> LatentStack:
    """Single C x L frame -> stack of N latents, each 1 x L_z."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"encode expects one C x L frame, got shape {x.shape}")
    with no_grad():
        z = model.encode_batch(x).data[0]
    return LatentStack.from_array(z)


def decomposition_loss(model: DecompositionModel, x, rng: np.random.Generator) -> Tensor:
    """IADB loss of the composed prediction; draws alpha then x0 from ``rng``."""
    x = as_tensor(x)
    xb = x if x.ndim == 3 else x.reshape(1, *x.shape)
    z = model.encode_batch(xb)
    alpha, x0 = draw_blend(xb, rng)
    xa = Tensor(iadb_blend(x0, xb.data, _bcast(alpha, xb)))
    pred = model.composed(xa, alpha, z)
    if x.ndim == 2:
        pred = pred.reshape(x.shape)
    return squared_error(pred, x)


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-4
    batch: int = 32
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


def _check_finite(value: float, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step}")


def fit(params: list[Tensor], loss_fn: Callable, data: np.ndarray, config: TrainConfig,
        on_epoch: Callable | None = None) -> list[float]:
    """Minibatch AdamW loop shared by the decomposition and prior trainers.

    ``loss_fn(batch, rng)`` returns a scalar Tensor. Returns mean loss per epoch.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    opt = AdamW(params, lr=config.lr, betas=config.betas, eps=config.eps,
                weight_decay=config.weight_decay)
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for step, start in enumerate(range(0, len(data), config.batch)):
            batch = data[order[start:start + config.batch]]
            loss = loss_fn(batch, rng)
            value = loss.item()
            _check_finite(value, epoch, step)
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += value * len(batch)
        trace.append(total / len(data))
        log.info("epoch %d loss %.6f", epoch, trace[-1])
        if on_epoch is not None:
            on_epoch(epoch, trace[-1])
    return trace


def train_decomposition(model: DecompositionModel, dataset, config: TrainConfig,
                        on_epoch: Callable | None = None) -> tuple[DecompositionModel, list[float]]:
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim == 2:
        data = data[None]
    trace = fit(model.parameters(), lambda b, r: decomposition_loss(model, Tensor(b), r),
                data, config, on_epoch)
    return model, trace


def decode_component(model: DecompositionModel, z_i, x0, steps: int = 100) -> np.ndarray:
    """Render one latent (1 x L_z, or B x 1 x L_z) into data space."""
    z = as_tensor(z_i)
    x0 = np.asarray(as_tensor(x0).data)
    single = x0.ndim == 2
    if z.ndim == 2:
        z = z.reshape(1, *z.shape)
    xb = x0[None] if single else x0
    if z.shape[0] != xb.shape[0]:
        z = Tensor(np.broadcast_to(z.data, (xb.shape[0],) + z.shape[1:]))
    cond = model.condition(z)
    out = iadb_sample(model.denoiser, xb, SamplerConfig(steps), cond).data
    return out[0] if single else out


def separate(model: DecompositionModel, x, steps: int = 100, seed: int = 0) -> list[np.ndarray]:
    """N source estimates decoded from one shared initial noise draw."""
    x = np.asarray(as_tensor(x).data)
    if x.ndim != 2:
        raise ValueError(f"separate expects one C x L frame, got shape {x.shape}")
    return [est[0] for est in separate_batch(model, x[None], steps, [seed])]


def separate_batch(model: DecompositionModel, x, steps: int = 100,
                   seeds: Sequence[int] = (0,)) -> list[np.ndarray]:
    """Batched :func:`separate`; frame ``b`` draws its noise from ``default_rng(seeds[b])``."""
    x = np.asarray(as_tensor(x).data)
    if len(seeds) != x.shape[0]:
        raise ValueError(f"{len(seeds)} seeds for {x.shape[0]} frames")
    with no_grad():
        z = model.encode_batch(x).data
    x0 = np.stack([np.random.default_rng(s).standard_normal(x.shape[1:]) for s in seeds])
    return [decode_component(model, z[:, i:i + 1], x0, steps) for i in range(z.shape[1])]


def reconstruct(model: DecompositionModel, x, steps: int = 100, seed: int = 0) -> np.ndarray:
    parts = separate(model, x, steps, seed)
    with no_grad():
        return compose(model.operator, [Tensor(p) for p in parts]).data


def parameter_checksum(module: Module) -> str:
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
