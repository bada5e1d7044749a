"""Scale-invariant BSS scores, multi-scale STFT distance and MSE.

Signals of any shape are flattened before projection, so a C x L frame is
scored as one vector. Unbounded ratios are reported as ``+inf`` and skipped
(and counted) by :func:`summarize`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_SOURCES = 8
# an energy this far below the estimate's energy is numerically zero
ZERO_ENERGY_RATIO = 1e-24


@dataclass(frozen=True)
class SeparationScores:
    si_sdr: float
    si_sir: float
    si_sar: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.si_sdr, self.si_sir, self.si_sar)


@dataclass(frozen=True)
class STFTConfig:
    window_sizes: tuple[int, ...] = (64, 32, 16)
    hop_fraction: float = 0.25
    floor: float = 1e-7

    def __post_init__(self):
        sizes = tuple(int(w) for w in self.window_sizes)
        if not sizes or any(w <= 0 for w in sizes):
            raise ValueError("window sizes must be positive")
        if any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError("window sizes must be strictly decreasing")
        object.__setattr__(self, "window_sizes", sizes)

    @classmethod
    def five_scale(cls) -> "STFTConfig":
        return cls((2048, 1024, 512, 256, 128))

    @classmethod
    def for_length(cls, length: int) -> "STFTConfig":
        """Five-scale set when the signal is long enough, else (64, 32, 16)."""
        return cls.five_scale() if length >= 2048 else cls()


def _flat(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64).ravel()


def _reference_matrix(references: Sequence) -> np.ndarray:
    refs = np.stack([_flat(r) for r in references])
    # name the first reference that adds no new direction
    for k in range(1, refs.shape[0] + 1):
        if np.linalg.matrix_rank(refs[:k]) < k:
            raise ValueError(f"reference {k - 1} is linearly dependent on references 0..{k - 2}")
    return refs


def si_decompose(estimate, target_index: int, references: Sequence):
    """Split ``estimate`` into orthogonal (target, interference, artifact) parts.

    The target part is the projection onto the target reference, the
    interference part the remaining projection onto the span of all
    references, and the artifact part whatever lies outside that span.
    """
    e = _flat(estimate)
    refs = _reference_matrix(references)
    if refs.shape[1] != e.size:
        raise ValueError(f"estimate has {e.size} samples, references have {refs.shape[1]}")
    if not 0 <= target_index < refs.shape[0]:
        raise IndexError(f"target_index {target_index} out of range")
    t = refs[target_index]
    e_target = (e @ t) / (t @ t) * t
    coef, *_ = np.linalg.lstsq(refs.T, e, rcond=None)
    in_span = refs.T @ coef
    return e_target, in_span - e_target, e - in_span


def _db(num: float, den: float, scale: float) -> float:
    if den <= ZERO_ENERGY_RATIO * scale:
        return math.inf
    if num <= ZERO_ENERGY_RATIO * scale:
        return -math.inf
    return 10.0 * math.log10(num / den)


def si_scores(estimate, target_index: int, references: Sequence) -> SeparationScores:
    e = _flat(estimate)
    energy = float(e @ e)
    if energy == 0.0:
        raise ValueError("estimate has zero energy")
    if not np.any(_flat(references[target_index])):
        raise ValueError("target reference has zero energy")
    et, ei, ea = si_decompose(e, target_index, references)
    t2 = float(et @ et)
    return SeparationScores(
        si_sdr=_db(t2, float((ei + ea) @ (ei + ea)), energy),
        si_sir=_db(t2, float(ei @ ei), energy),
        si_sar=_db(float((et + ei) @ (et + ei)), float(ea @ ea), energy),
    )


def permute_and_score(estimates: Sequence, references: Sequence):
    """Exhaustive search for the estimate-to-reference assignment that
    maximises mean SI-SDR. ``perm[j]`` is the estimate matched to reference j."""
    n = len(references)
    if len(estimates) != n:
        raise ValueError(f"{len(estimates)} estimates for {n} references")
    if n > MAX_SOURCES:
        raise ValueError(f"refusing to enumerate {n}! permutations (limit {MAX_SOURCES})")
    table = [[si_scores(estimates[i], j, references) for j in range(n)] for i in range(n)]
    best, best_score = None, -math.inf
    for perm in itertools.permutations(range(n)):
        score = float(np.mean([table[perm[j]][j].si_sdr for j in range(n)]))
        if best is None or score > best_score:
            best, best_score = perm, score
    return best, [table[best[j]][j] for j in range(n)]


def _stft_mag(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    # x: rows x L -> rows x frames x bins
    frames = np.lib.stride_tricks.sliding_window_view(x, window, axis=-1)[..., ::hop, :]
    return np.abs(np.fft.rfft(frames * np.hanning(window), axis=-1))


def ms_stft_distance(a, b, config: STFTConfig | None = None) -> float:
    """Sum over scales of spectral convergence plus mean L1 log-magnitude gap.

    Spectral convergence is normalised by ``a``'s spectrogram, so the
    distance is symmetric only up to that normalisation.
    """
    a = np.atleast_2d(np.asarray(getattr(a, "data", a), dtype=np.float64))
    b = np.atleast_2d(np.asarray(getattr(b, "data", b), dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    length = a.shape[-1]
    config = config or STFTConfig.for_length(length)
    a, b = a.reshape(-1, length), b.reshape(-1, length)
    total = 0.0
    for w in config.window_sizes:
        if w > length:
            raise ValueError(f"window {w} exceeds signal length {length}")
        hop = max(1, int(w * config.hop_fraction))
        sa, sb = _stft_mag(a, w, hop), _stft_mag(b, w, hop)
        sc = np.linalg.norm(sa - sb) / max(np.linalg.norm(sa), config.floor)
        logmag = np.mean(np.abs(np.log(np.maximum(sa, config.floor)) - np.log(np.maximum(sb, config.floor))))
        total += sc + logmag
    return float(total)


def mse(a, b) -> float:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def summarize(values: Sequence[float]) -> dict:
    """Mean/std over finite values plus the count of infinite sentinels."""
    arr = np.asarray(values, dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    return {
        "mean": float(finite.mean()) if finite.size else math.nan,
        "std": float(finite.std()) if finite.size else math.nan,
        "count": int(arr.size),
        "sentinels": int(arr.size - finite.size),
    }
