"""Convolution, resampling and normalisation ops on NCHW float64 tensors."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import DiffTensor, _make, as_tensor


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 1):
    """Cross-correlation of x (N, C, H, W) with weight (O, C, kh, kw) via im2col."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    N, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    p, s = padding, stride
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d output would be empty")
    # channel-major im2col: cols[c, i, j, n, y, x] = xpad[n, c, s*y + i, s*x + j]
    xt = x.data.transpose(1, 0, 2, 3)
    if p:
        xt = np.pad(xt, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((C, kh, kw, N, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + s * Ho:s, j:j + s * Wo:s]
    cols = cols.reshape(C * kh * kw, N * Ho * Wo)
    wmat = weight.data.reshape(O, -1)
    out = wmat @ cols
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    out = out.reshape(O, N, Ho, Wo).transpose(1, 0, 2, 3)

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, -1)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(C, kh, kw, N, Ho, Wo)
            dxt = np.zeros((C, N, H + 2 * p, W + 2 * p))
            for i in range(kh):
                for j in range(kw):
                    dxt[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += dcols[:, i, j]
            gx = dxt[:, :, p:p + H, p:p + W].transpose(1, 0, 2, 3)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(np.ascontiguousarray(out), parents, bw, "conv2d")


def upsample_nearest(x, factor: int = 2):
    x = as_tensor(x)
    N, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(N, C, H, factor, W, factor).sum(axis=(3, 5)),)
    return _make(out, (x,), bw, "upsample")


def group_norm(x, gamma, beta, groups: int = 8, eps: float = 1e-5):
    """Normalise each group of channels over (channels-in-group, spatial), then scale/shift per channel."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    N, C = x.shape[:2]
    if C % groups:
        raise ShapeError(f"{C} channels not divisible into {groups} groups")
    xg = x.data.reshape(N, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    bshape = (1, C) + (1,) * (x.ndim - 2)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gb = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = (g * gamma.data.reshape(bshape)).reshape(N, groups, -1)
            xh = xhat.reshape(N, groups, -1)
            gx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                        - xh * (dxhat * xh).mean(axis=2, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, gg, gb
    return _make(out, (x, gamma, beta), bw, "group_norm")


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalise over the last axis, then scale/shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gg = (g * xhat).sum(axis=red) if gamma.requires_grad else None
        gb = g.sum(axis=red) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb
    return _make(out, (x, gamma, beta), bw, "layer_norm")


def channel_bias(x, b):
    """Add a per-(sample, channel) vector b (N, C) to x (N, C, H, W)."""
    x, b = as_tensor(x), as_tensor(b)
    out = x.data + b.data[:, :, None, None]
    return _make(out, (x, b), lambda g: (g, g.sum(axis=(2, 3))), "channel_bias")


__all__ = ["conv2d", "upsample_nearest", "group_norm", "layer_norm", "channel_bias", "DiffTensor"]
