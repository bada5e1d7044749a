"""Parameter containers and layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Module:
    """Base class: parameters are Tensor attributes (or nested Modules /
    lists of Modules) discovered in attribute definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            new = np.array(arr)
            new.flags.writeable = False
            p.data = new

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, f_in: int, f_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, (f_out, f_in), f_in)
        self.bias = zeros((f_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.affine(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        self.weight = uniform_init(rng, (c_out, c_in, k), c_in * k)
        self.bias = zeros((c_out,))
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        if channels % groups:
            raise ValueError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.eps = eps
        self.gamma = ones((channels,))
        self.beta = zeros((channels,))

    def forward(self, x: Tensor) -> Tensor:
        return F.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class SelfAttention(Module):
    """Single-head attention block with a residual connection."""

    def __init__(self, channels: int, rng: np.random.Generator, groups: int = 8):
        self.norm = GroupNorm(groups, channels)
        self.wq = uniform_init(rng, (channels, channels), channels)
        self.wk = uniform_init(rng, (channels, channels), channels)
        self.wv = uniform_init(rng, (channels, channels), channels)
        self.wo = uniform_init(rng, (channels, channels), channels)

    def forward(self, x: Tensor) -> Tensor:
        return x + F.attention(self.norm(x), self.wq, self.wk, self.wv, self.wo)
