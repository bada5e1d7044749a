"""Hot numeric kernels: conv1d and group norm, forward and backward.

Two implementations live side by side. The numba path compiles explicit loops
with ``@njit``; the numpy path uses strided views and BLAS matmuls. Set
``COMPODIFF_NUMBA=0`` to force the numpy path (the default is numba when it
imports). Both operate on batched ``(B, C, L)`` float64 arrays.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("COMPODIFF_NUMBA", "1") not in ("0", "", "false")


def _windows(xp: np.ndarray, k: int, stride: int, l_out: int) -> np.ndarray:
    # (B, C, Lp) -> read-only view (B, L_out, C, K)
    b, c, _ = xp.shape
    sb, sc, sl = xp.strides
    return as_strided(xp, shape=(b, l_out, c, k), strides=(sb, sl * stride, sc, sl), writeable=False)


# -- numpy path ---------------------------------------------------------------

def conv1d_forward_np(x, w, stride, padding):
    b, c_in, length = x.shape
    c_out, _, k = w.shape
    l_out = (length + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(x)
    cols = _windows(xp, k, stride, l_out).reshape(b * l_out, c_in * k)
    out = cols @ w.reshape(c_out, c_in * k).T
    return np.ascontiguousarray(out.reshape(b, l_out, c_out).transpose(0, 2, 1))


def conv1d_backward_np(x, w, g, stride, padding):
    b, c_in, length = x.shape
    c_out, _, k = w.shape
    l_out = g.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(x)
    cols = _windows(xp, k, stride, l_out).reshape(b * l_out, c_in * k)
    g2 = g.transpose(0, 2, 1).reshape(b * l_out, c_out)
    gw = (g2.T @ cols).reshape(w.shape)
    dcols = (g2 @ w.reshape(c_out, c_in * k)).reshape(b, l_out, c_in, k)
    gxp = np.zeros(xp.shape)
    span = stride * (l_out - 1) + 1
    for j in range(k):
        gxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
    gx = gxp[:, :, padding:padding + length] if padding else gxp
    return gx, gw


def group_norm_forward_np(x, groups, eps):
    b, c, length = x.shape
    xg = x.reshape(b, groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    # second pass removes the rounding error of the first (exact for constant groups)
    mean = mean + (xg - mean).mean(axis=2, keepdims=True)
    var = ((xg - mean) ** 2).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean) * inv).reshape(b, c, length)
    return xhat, inv.reshape(b, groups)


def group_norm_backward_np(xhat, inv, g_xhat, groups):
    # gradient through normalisation only; gamma/beta handled by the caller
    b, c, length = xhat.shape
    xh = xhat.reshape(b, groups, -1)
    gh = g_xhat.reshape(b, groups, -1)
    m = xh.shape[2]
    gx = (inv[:, :, None] / m) * (m * gh - gh.sum(axis=2, keepdims=True)
                                  - xh * (gh * xh).sum(axis=2, keepdims=True))
    return gx.reshape(b, c, length)


# -- numba path ---------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _pad_nb(x, padding):
        b, c, length = x.shape
        xp = np.zeros((b, c, length + 2 * padding))
        for i in range(b):
            for j in range(c):
                for t in range(length):
                    xp[i, j, t + padding] = x[i, j, t]
        return xp

    @numba.njit(cache=True)
    def _im2col_nb(xp, k, stride, l_out):
        b, c, _ = xp.shape
        cols = np.empty((b * l_out, c * k))
        for i in range(b):
            for t in range(l_out):
                row = i * l_out + t
                base = t * stride
                for j in range(c):
                    for q in range(k):
                        cols[row, j * k + q] = xp[i, j, base + q]
        return cols

    @numba.njit(cache=True)
    def conv1d_forward_nb(x, w, stride, padding):
        b, c_in, length = x.shape
        c_out, _, k = w.shape
        l_out = (length + 2 * padding - k) // stride + 1
        xp = _pad_nb(x, padding)
        cols = _im2col_nb(xp, k, stride, l_out)
        prod = cols @ np.ascontiguousarray(w.reshape(c_out, c_in * k).T)
        out = np.empty((b, c_out, l_out))
        for i in range(b):
            for t in range(l_out):
                for o in range(c_out):
                    out[i, o, t] = prod[i * l_out + t, o]
        return out

    @numba.njit(cache=True)
    def conv1d_backward_nb(x, w, g, stride, padding):
        b, c_in, length = x.shape
        c_out, _, k = w.shape
        l_out = g.shape[2]
        xp = _pad_nb(x, padding)
        cols = _im2col_nb(xp, k, stride, l_out)
        g2 = np.empty((b * l_out, c_out))
        for i in range(b):
            for t in range(l_out):
                for o in range(c_out):
                    g2[i * l_out + t, o] = g[i, o, t]
        gw = (np.ascontiguousarray(g2.T) @ cols).reshape(c_out, c_in, k)
        dcols = g2 @ np.ascontiguousarray(w.reshape(c_out, c_in * k))
        gx = np.zeros((b, c_in, length))
        for i in range(b):
            for t in range(l_out):
                row = i * l_out + t
                base = t * stride - padding
                for j in range(c_in):
                    for q in range(k):
                        pos = base + q
                        if 0 <= pos < length:
                            gx[i, j, pos] += dcols[row, j * k + q]
        return gx, gw

    @numba.njit(cache=True)
    def group_norm_forward_nb(x, groups, eps):
        b, c, length = x.shape
        per = c // groups
        m = per * length
        xhat = np.empty_like(x)
        inv = np.empty((b, groups))
        for i in range(b):
            for gi in range(groups):
                s = 0.0
                for j in range(gi * per, (gi + 1) * per):
                    for t in range(length):
                        s += x[i, j, t]
                mu = s / m
                s = 0.0
                for j in range(gi * per, (gi + 1) * per):
                    for t in range(length):
                        s += x[i, j, t] - mu
                mu += s / m
                v = 0.0
                for j in range(gi * per, (gi + 1) * per):
                    for t in range(length):
                        d = x[i, j, t] - mu
                        v += d * d
                r = 1.0 / np.sqrt(v / m + eps)
                inv[i, gi] = r
                for j in range(gi * per, (gi + 1) * per):
                    for t in range(length):
                        xhat[i, j, t] = (x[i, j, t] - mu) * r
        return xhat, inv

    @numba.njit(cache=True)
    def group_norm_backward_nb(xhat, inv, g_xhat, groups):
        b, c, length = xhat.shape
        per = c // groups
        m = per * length
        gx = np.empty_like(xhat)
        for i in range(b):
            for gi in range(groups):
                sg = 0.0
                sgx = 0.0
                for j in range(gi * per, (gi + 1) * per):
                    for t in range(length):
                        sg += g_xhat[i, j, t]
                        sgx += g_xhat[i, j, t] * xhat[i, j, t]
                scale = inv[i, gi] / m
                for j in range(gi * per, (gi + 1) * per):
                    for t in range(length):
                        gx[i, j, t] = scale * (m * g_xhat[i, j, t] - sg - xhat[i, j, t] * sgx)
        return gx


def conv1d_forward(x, w, stride, padding):
    if USE_NUMBA:
        return conv1d_forward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w), stride, padding)
    return conv1d_forward_np(x, w, stride, padding)


def conv1d_backward(x, w, g, stride, padding):
    if USE_NUMBA:
        return conv1d_backward_nb(np.ascontiguousarray(x), np.ascontiguousarray(w),
                                  np.ascontiguousarray(g), stride, padding)
    return conv1d_backward_np(x, w, g, stride, padding)


def group_norm_forward(x, groups, eps):
    if USE_NUMBA:
        return group_norm_forward_nb(np.ascontiguousarray(x), groups, eps)
    return group_norm_forward_np(x, groups, eps)


def group_norm_backward(xhat, inv, g_xhat, groups):
    if USE_NUMBA:
        return group_norm_backward_nb(np.ascontiguousarray(xhat), inv, np.ascontiguousarray(g_xhat), groups)
    return group_norm_backward_np(xhat, inv, g_xhat, groups)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
