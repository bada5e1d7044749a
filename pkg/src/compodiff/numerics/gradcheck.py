"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def grad_check(fn: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``fn`` maps a Tensor to a scalar Tensor; the analytic gradient comes from
    reverse mode, the numeric one from central differences of step ``h``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base, requires_grad=True)
    out = fn(x)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out, leaves=[x])
    analytic = x.grad
    numeric = np.empty_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += h
        minus[i] -= h
        fp = fn(Tensor(plus.reshape(base.shape))).item()
        fm = fn(Tensor(minus.reshape(base.shape))).item()
        flat[i] = (fp - fm) / (2 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
