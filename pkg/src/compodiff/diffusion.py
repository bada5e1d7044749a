"""Noise schedules, the DDPM reference objective and IADB blending/sampling.

A *denoiser* is any callable ``(x_alpha, alpha, condition) -> Tensor`` whose
output has the shape of ``x_alpha``. Inputs may be single frames (C x L) or
batches (B x C x L); ``alpha`` is a scalar or one value per batch row.

Random draws happen in a fixed order so losses can be replayed by hand:
``iadb_loss`` draws alpha (one per row) and then x0; ``ddpm_loss`` draws t and
then eps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import Tensor, as_tensor, no_grad

Denoiser = Callable[[Tensor, np.ndarray, Optional[Tensor]], Tensor]

# largest alpha at which x0 is re-estimated from a prediction
ALPHA_GUARD = 1.0 - 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be non-decreasing")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, steps: int = 1000, start: float = 1e-4, end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(start, end, steps))

    @classmethod
    def constant(cls, beta: float, steps: int) -> "NoiseSchedule":
        return cls(np.full(steps, beta))

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product for 1-based step ``t``."""
        if not 1 <= t <= self.T:
            raise ValueError(f"t must be in [1, {self.T}], got {t}")
        return float(self.alpha_bars[t - 1])


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.steps + 1)


def _per_row(x: Tensor) -> int:
    return x.shape[0] if x.ndim == 3 else 1


def _bcast(values: np.ndarray, x: Tensor) -> np.ndarray:
    # per-row scalars -> shape broadcastable against x
    return values.reshape(-1, *([1] * (x.ndim - 1))) if x.ndim == 3 else values.reshape(())


def squared_error(pred: Tensor, target) -> Tensor:
    """Per-frame squared L2 error, averaged over the batch when batched."""
    diff = pred - as_tensor(target)
    if diff.ndim == 3:
        return (diff ** 2).sum(axis=(1, 2)).mean()
    return (diff ** 2).sum()


# -- DDPM reference path ------------------------------------------------------

def ddpm_forward(x0, t: int, eps, schedule: NoiseSchedule) -> Tensor:
    """Closed-form marginal sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0, eps = as_tensor(x0), as_tensor(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    abar = schedule.alpha_bar(t)
    return x0 * np.sqrt(abar) + eps * np.sqrt(1.0 - abar)


def ddpm_loss(denoiser: Denoiser, x0, schedule: NoiseSchedule, rng: np.random.Generator) -> Tensor:
    """Noise-prediction objective with t ~ U{1..T} and eps ~ N(0, I)."""
    x0 = as_tensor(x0)
    rows = _per_row(x0)
    t = rng.integers(1, schedule.T + 1, size=rows)
    eps = rng.standard_normal(x0.shape)
    abar = schedule.alpha_bars[t - 1]
    xt = x0 * _bcast(np.sqrt(abar), x0) + Tensor(eps * _bcast(np.sqrt(1.0 - abar), x0))
    level = t / schedule.T
    pred = denoiser(xt, level if x0.ndim == 3 else float(level[0]), None)
    return squared_error(pred, eps)


# -- IADB ---------------------------------------------------------------------

def iadb_blend(x0, x1, alpha):
    """(1 - alpha) x0 + alpha x1; works on arrays or Tensors."""
    if np.any(np.asarray(alpha) < 0) or np.any(np.asarray(alpha) > 1):
        raise ValueError("alpha must lie in [0, 1]")
    s0 = x0.shape
    s1 = x1.shape
    if s0 != s1:
        raise ValueError(f"shape mismatch: {s0} vs {s1}")
    return x0 * (1.0 - alpha) + x1 * alpha


def draw_blend(x1: Tensor, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (alpha per row, x0) in the canonical order."""
    alpha = rng.uniform(0.0, 1.0, size=_per_row(x1))
    x0 = rng.standard_normal(x1.shape)
    return alpha, x0


def iadb_loss(denoiser: Denoiser, x1, condition: Tensor | None = None,
              rng: np.random.Generator | None = None) -> Tensor:
    """Data-prediction IADB objective ``||D(x_alpha, alpha) - x1||^2``."""
    if rng is None:
        raise ValueError("an explicit rng is required")
    x1 = as_tensor(x1)
    alpha, x0 = draw_blend(x1, rng)
    xa = Tensor(iadb_blend(x0, x1.data, _bcast(alpha, x1)))
    pred = denoiser(xa, alpha if x1.ndim == 3 else float(alpha[0]), condition)
    return squared_error(pred, x1)


def iadb_sample(denoiser: Denoiser, x0, config: SamplerConfig, condition: Tensor | None = None,
                project: Callable[[np.ndarray], np.ndarray] | None = None,
                trace: list | None = None) -> Tensor:
    """Deterministic sampler walking a uniform alpha grid from 0 to 1.

    At each grid point the denoiser predicts x1; x0 is re-estimated from the
    current state and both endpoints are re-blended at the next alpha. The
    last step (alpha' = 1) returns the final prediction. ``project`` is applied
    to the state after every update (used for clamping known values).
    """
    if config.steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(as_tensor(x0).data)
    grid = config.grid()
    with no_grad():
        for k in range(config.steps):
            a, a_next = grid[k], grid[k + 1]
            x1_hat = denoiser(Tensor(x), a, condition).data
            ag = min(a, ALPHA_GUARD)
            x0_hat = (x - ag * x1_hat) / (1.0 - ag)
            x = (1.0 - a_next) * x0_hat + a_next * x1_hat
            if project is not None:
                x = project(x)
            if trace is not None:
                trace.append(x.copy())
    return Tensor(x)
