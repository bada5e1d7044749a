"""Minimal float64 tensor engine with reverse-mode autodiff."""

from . import functional, nn
from ._kernels import backend
from .functional import (affine, attention, concat, conv1d, group_norm, resize_nearest, silu,
                         sinusoidal_embedding, softmax, stack, tanh, upsample_nearest)
from .gradcheck import grad_check
from .optim import AdamW
from .tensor import Tensor, as_tensor, backward, build_graph, is_grad_enabled, no_grad

__all__ = [
    "AdamW", "Tensor", "affine", "as_tensor", "attention", "backend", "backward", "build_graph",
    "concat", "conv1d", "functional", "grad_check", "group_norm", "is_grad_enabled", "nn",
    "no_grad", "resize_nearest", "silu", "sinusoidal_embedding", "softmax", "stack", "tanh",
    "upsample_nearest",
]
