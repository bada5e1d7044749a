"""Synthetic two-source mixtures with ground-truth stems.

Each frame is ``channels x length`` (default 4 x 128). Channel 0 carries the
waveform; channels 1-3 are fixed band-pass filtered copies (low / mid / high
band). A "bass-like" harmonic source is band-limited to low frequencies and a
"drum-like" percussive source is a sparse train of decaying high-passed noise
bursts. Frequencies are expressed in cycles per frame.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import firwin

HARMONIC = "harmonic"
PERCUSSIVE = "percussive"


@dataclass(frozen=True)
class SourceParams:
    """Draw ranges for one source family.

    ``rate_range`` is the fundamental (cycles/frame) for harmonic sources and
    the onset rate (bursts/frame) for percussive ones. ``decay_range`` is the
    envelope time constant in samples; ``inf`` disables the envelope.
    """

    kind: str
    rate_range: tuple[float, float]
    amp_range: tuple[float, float]
    decay_range: tuple[float, float]
    seed: int = 0
    max_partials: int = 3
    cutoff: float = 24.0

    def __post_init__(self):
        if self.kind not in (HARMONIC, PERCUSSIVE):
            raise ValueError(f"unknown source kind {self.kind!r}")
        for name in ("rate_range", "amp_range", "decay_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.max_partials < 1:
            raise ValueError("max_partials must be >= 1")


def default_harmonic() -> SourceParams:
    return SourceParams(HARMONIC, rate_range=(3.0, 8.0), amp_range=(0.4, 1.0),
                        decay_range=(150.0, 600.0))


def default_percussive() -> SourceParams:
    return SourceParams(PERCUSSIVE, rate_range=(2.0, 4.0), amp_range=(1.4, 2.8),
                        decay_range=(3.0, 8.0))


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    if lo == hi:
        return float(lo)
    return float(rng.uniform(lo, hi))


def _rate(rng: np.random.Generator, bounds: tuple[float, float], quantile: float | None) -> float:
    if quantile is None:
        return _uniform(rng, bounds)
    lo, hi = bounds
    return float(lo + quantile * (hi - lo))


def _envelope(length: int, decay: float) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    if math.isinf(decay):
        return np.ones(length)
    return np.exp(-t / decay)


def gen_harmonic(params: SourceParams, rng: np.random.Generator, length: int,
                 rate_quantile: float | None = None, record: dict | None = None) -> np.ndarray:
    """Sum of 1..max_partials sinusoidal partials under a slow decay envelope.

    Partials at or above ``params.cutoff`` cycles/frame are dropped, so the
    result is band-limited. A given ``rate_quantile`` in [0, 1] fixes the
    fundamental's position in its range instead of drawing it. The drawn
    values are written into ``record`` when one is passed.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    f0 = _rate(rng, params.rate_range, rate_quantile)
    amp = _uniform(rng, params.amp_range)
    decay = _uniform(rng, params.decay_range)
    n_partials = int(rng.integers(1, params.max_partials + 1))
    phases = rng.uniform(0.0, 2 * np.pi, size=params.max_partials)
    t = np.arange(length, dtype=np.float64) / length
    out = np.zeros(length)
    for k in range(1, n_partials + 1):
        freq = k * f0
        if freq >= params.cutoff:
            break
        out += (amp / k) * np.sin(2 * np.pi * freq * t + phases[k - 1])
    if record is not None:
        record.update(kind=HARMONIC, f0=f0, amp=amp, decay=decay, partials=n_partials)
    return out * _envelope(length, decay)


# high-pass taps for the burst noise; half of Nyquist
_BURST_TAPS = firwin(9, 0.5, pass_zero=False)


def burst_templates(params: SourceParams, length: int) -> np.ndarray:
    """Fixed bank of high-passed noise bursts, one row per "drum" voice.

    The bank depends only on ``params.seed``; individual bursts pick a voice,
    so the percussive source behaves like a kit replaying a few samples.
    """
    rng = np.random.default_rng(params.seed)
    noise = rng.standard_normal((params.max_partials, length + len(_BURST_TAPS) - 1))
    bank = np.stack([np.convolve(row, _BURST_TAPS, mode="valid") for row in noise])
    return bank / np.sqrt(np.mean(bank ** 2, axis=1, keepdims=True))


def gen_percussive(params: SourceParams, rng: np.random.Generator, length: int,
                   rate_quantile: float | None = None, record: dict | None = None) -> np.ndarray:
    """Sparse train of exponentially decaying high-passed noise bursts.

    Onsets are evenly spaced at ``length / rate`` samples with a random
    offset; each burst is zero before its onset. ``max_partials`` sets the
    number of voices in the burst bank. ``rate_quantile`` and ``record``
    behave as in :func:`gen_harmonic`.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    rate = _rate(rng, params.rate_range, rate_quantile)
    out = np.zeros(length)
    if record is not None:
        record.update(kind=PERCUSSIVE, rate=rate, onsets=[])
    if rate <= 0:
        return out
    bank = burst_templates(params, length)
    spacing = length / rate
    onset = rng.uniform(0.0, min(spacing, length))
    while onset < length:
        start = int(onset)
        amp = _uniform(rng, params.amp_range)
        decay = _uniform(rng, params.decay_range)
        voice = bank[int(rng.integers(len(bank)))]
        n = length - start
        out[start:] += amp * voice[:n] * _envelope(n, decay)
        if record is not None:
            record["onsets"].append(start)
        onset += spacing
    return out


# channel filters: low / mid / high band copies of the waveform
_BAND_TAPS = (
    firwin(17, 0.35),
    firwin(17, [0.35, 0.6], pass_zero=False),
    firwin(17, 0.6, pass_zero=False),
)


def to_frame(signal: np.ndarray, channels: int = 4) -> np.ndarray:
    """Stack the waveform with its band-passed copies into a ``channels x L`` frame."""
    rows = [signal]
    for taps in _BAND_TAPS[: channels - 1]:
        # centred slice of the full convolution; "same" mode breaks for frames shorter than the filter
        half = (len(taps) - 1) // 2
        rows.append(np.convolve(signal, taps)[half:half + len(signal)])
    if len(rows) < channels:
        raise ValueError(f"at most {len(_BAND_TAPS) + 1} channels supported")
    return np.stack(rows)


@dataclass
class DataConfig:
    channels: int = 4
    length: int = 128
    seed: int = 0
    harmonic: SourceParams = field(default_factory=default_harmonic)
    percussive: SourceParams = field(default_factory=default_percussive)
    # both rates sit at one shared quantile of their ranges, like bass and
    # drums following one tempo
    shared_tempo: bool = True


@dataclass
class MixtureSample:
    mixture: np.ndarray
    stems: list[np.ndarray]
    params: list[dict]
    scale: float

    def check(self, tol: float = 1e-12) -> None:
        resid = np.max(np.abs(self.mixture - sum(self.stems)))
        if resid > tol:
            raise ValueError(f"mixture differs from stem sum by {resid:.3e}")


def make_sample(config: DataConfig, index: int) -> MixtureSample:
    # per-sample stream so samples can be generated independently
    rng = np.random.default_rng([config.seed, config.harmonic.seed, config.percussive.seed, index])
    tempo = float(rng.uniform()) if config.shared_tempo else None
    draws: list[dict] = [{}, {}]
    h = gen_harmonic(config.harmonic, rng, config.length, tempo, draws[0])
    p = gen_percussive(config.percussive, rng, config.length, tempo, draws[1])
    frames = [to_frame(h, config.channels), to_frame(p, config.channels)]
    raw = frames[0] + frames[1]
    peak = float(np.max(np.abs(raw)))
    scale = 1.0 / peak if peak > 0 else 1.0
    stems = [f * scale for f in frames]
    mixture = stems[0] + stems[1]
    return MixtureSample(
        mixture=mixture,
        stems=stems,
        params=draws,
        scale=scale,
    )


def make_dataset(config: DataConfig, size: int, offset: int = 0) -> list[MixtureSample]:
    """Deterministic list of ``size`` samples; ``offset`` shifts the sample index
    so train and test splits can share one config without overlapping."""
    if size <= 0:
        raise ValueError("size must be positive")
    return [make_sample(config, offset + i) for i in range(size)]


def spectral_flatness(signal: np.ndarray, floor: float = 1e-12) -> float:
    """Geometric over arithmetic mean of the power spectrum (DC excluded)."""
    power = np.abs(np.fft.rfft(signal))[1:] ** 2 + floor
    return float(np.exp(np.mean(np.log(power))) / np.mean(power))


def write_wav(path: str | Path, signal: np.ndarray, rate: int = 8000) -> None:
    """16-bit PCM mono export, peak-normalised to avoid clipping."""
    peak = float(np.max(np.abs(signal))) or 1.0
    pcm = np.round(signal / peak * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
