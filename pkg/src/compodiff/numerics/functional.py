"""Differentiable primitives used by the encoder and denoisers."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .tensor import Tensor, as_tensor, make_result


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise ValueError(f"expected a C x L or B x C x L input, got shape {x.shape}")
    return x, False


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation of ``x`` (C_in x L or B x C_in x L) with
    ``kernels`` (C_out x C_in x K)."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    xb, squeeze = _batched(x)
    if kernels.ndim != 3:
        raise ValueError(f"kernels must be C_out x C_in x K, got shape {kernels.shape}")
    c_out, c_in, k = kernels.shape
    if xb.shape[1] != c_in:
        raise ValueError(f"input channel dimension {xb.shape[1]} != kernel C_in {c_in}")
    length = xb.shape[2]
    if k > length + 2 * padding:
        raise ValueError(f"kernel length {k} exceeds padded input length {length + 2 * padding}")
    xd, wd = xb.data, kernels.data

    def back(g):
        gx, gw = _kernels.conv1d_backward(xd, wd, g, stride, padding)
        return gx, gw

    out = make_result(_kernels.conv1d_forward(xd, wd, stride, padding), (xb, kernels), back, "conv1d")
    if bias is not None:
        out = out + bias.reshape(c_out, 1)
    return out.reshape(out.shape[1:]) if squeeze else out


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the trailing dimension."""
    if weight.ndim != 2:
        raise ValueError(f"weight must be F_out x F_in, got shape {weight.shape}")
    f_out, f_in = weight.shape
    if x.shape[-1] != f_in:
        raise ValueError(f"trailing input dimension {x.shape[-1]} != weight F_in {f_in}")
    if bias is not None and bias.shape != (f_out,):
        raise ValueError(f"bias shape {bias.shape} != ({f_out},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, f_in)
    w = weight.data
    out = x2 @ w.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, f_out)
        grads = [(g2 @ w).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out.reshape(*lead, f_out), parents, back, "affine")


def group_norm(x: Tensor, groups: int, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalise each group of channels to zero mean, unit variance, then
    apply the per-channel affine ``gamma``/``beta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    xb, squeeze = _batched(x)
    c = xb.shape[1]
    if groups < 1 or c % groups:
        raise ValueError(f"channel count {c} is not divisible by groups={groups}")
    xhat, inv = _kernels.group_norm_forward(xb.data, groups, eps)

    def back(g):
        return (_kernels.group_norm_backward(xhat, inv, g, groups),)

    out = make_result(xhat, (xb,), back, "group_norm")
    if gamma is not None:
        out = out * gamma.reshape(c, 1)
    if beta is not None:
        out = out + beta.reshape(c, 1)
    return out.reshape(out.shape[1:]) if squeeze else out


def silu(x: Tensor) -> Tensor:
    a = x.data
    s = 1.0 / (1.0 + np.exp(-a))
    return make_result(a * s, (x,), lambda g: (g * s * (1.0 + a * (1.0 - s)),), "silu")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(a)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), back, "softmax")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("cannot stack an empty list")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ValueError(f"stack needs equal shapes, got {shape} and {t.shape}")

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back, "stack")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat every element of the last axis ``factor`` times."""
    if factor == 1:
        return x
    src = x.shape

    def back(g):
        return (g.reshape(*src, factor).sum(axis=-1),)

    return make_result(np.repeat(x.data, factor, axis=-1), (x,), back, "upsample")


def resize_nearest(x: Tensor, length: int) -> Tensor:
    """Nearest-neighbour length matching of the last axis."""
    n = x.shape[-1]
    if length % n == 0:
        return upsample_nearest(x, length // n)
    idx = (np.arange(length) * n) // length
    return x[..., idx]


def sinusoidal_embedding(values: np.ndarray, frequencies: int = 64, scale: float = 1000.0) -> np.ndarray:
    """Transformer-style positional encoding of scalar noise levels.

    Returns an array of shape ``(len(values), 2 * frequencies)``.
    """
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    freqs = np.exp(-np.log(10000.0) * np.arange(frequencies) / frequencies)
    ang = scale * values[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor) -> Tensor:
    """Single-head dot-product self-attention over the time axis of B x C x L."""
    h = x.swapaxes(1, 2)  # B x L x C
    q, k, v = affine(h, wq), affine(h, wk), affine(h, wv)
    scores = (q @ k.swapaxes(1, 2)) * (1.0 / np.sqrt(q.shape[-1]))
    out = affine(softmax(scores, axis=-1) @ v, wo)
    return out.swapaxes(1, 2)
