"""Spatial ops on [C, H, W] maps: conv2d, 2x bilinear up, 2x box down.

conv2d lowers to im2col plus a single matmul; the backward scatters through
the same window slices in a fixed order, so gradients are deterministic.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _lift, record_op


def _im2col(xp, kh, kw, ho, wo, stride):
    cin = xp.shape[0]
    cols = np.empty((cin, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + (ho - 1) * stride + 1 : stride,
                               j : j + (wo - 1) * stride + 1 : stride]
    return cols


def conv2d(x, kernel, bias, stride=1):
    """2-d convolution with zero padding k//2.

    x: [C_in, H, W]; kernel: [C_out, C_in, k, k] with k odd; bias: [C_out].
    stride 1 preserves H x W; stride 2 halves them (rounding up).
    """
    x, kernel, bias = _lift(x), _lift(kernel), _lift(bias)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects [C,H,W] and [Co,Ci,k,k], got {x.shape}, {kernel.shape}")
    cout, cin_k, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd size, got {kh}x{kw}")
    cin, h, w = x.shape
    if cin != cin_k:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {cin_k}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")

    pad = kh // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = _im2col(xp, kh, kw, ho, wo, stride)
    kmat = kernel.data.reshape(cout, cin * kh * kw)
    out_mat = kmat @ cols.reshape(cin * kh * kw, ho * wo)
    out_data = out_mat.reshape(cout, ho, wo) + bias.data[:, None, None]
    out = Tensor(out_data, requires_grad=x.requires_grad or kernel.requires_grad or bias.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        gmat = g.reshape(cout, ho * wo)
        if bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=1))
        if kernel.requires_grad:
            kernel.accumulate_grad((gmat @ cols.reshape(cin * kh * kw, ho * wo).T).reshape(kernel.shape))
        if x.requires_grad:
            gcols = (kmat.T @ gmat).reshape(cin, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride] += gcols[:, i, j]
            x.accumulate_grad(gxp[:, pad : pad + h, pad : pad + w])

    record_op((out,), backward)
    return out


def _up2_axis_weights(n):
    # Output sample i reads source coordinate (i + 0.5)/2 - 0.5 (half-pixel
    # centers); edge reads clamp to the border row/column.
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)
    return lo, hi, frac


def upsample_bilinear2x(x):
    """Double H and W with bilinear interpolation at half-pixel centers."""
    x = _lift(x)
    if x.ndim != 3:
        raise ValueError(f"upsample_bilinear2x expects [C,H,W], got {x.shape}")
    _, h, w = x.shape
    rlo, rhi, rf = _up2_axis_weights(h)
    clo, chi, cf = _up2_axis_weights(w)
    rf = rf.astype(x.dtype)
    cf = cf.astype(x.dtype)

    rows = x.data[:, rlo, :] * (1.0 - rf)[None, :, None] + x.data[:, rhi, :] * rf[None, :, None]
    out_data = rows[:, :, clo] * (1.0 - cf)[None, None, :] + rows[:, :, chi] * cf[None, None, :]
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        grows = np.zeros_like(rows)
        np.add.at(grows, (slice(None), slice(None), clo), g * (1.0 - cf)[None, None, :])
        np.add.at(grows, (slice(None), slice(None), chi), g * cf[None, None, :])
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), rlo, slice(None)), grows * (1.0 - rf)[None, :, None])
        np.add.at(gx, (slice(None), rhi, slice(None)), grows * rf[None, :, None])
        x.accumulate_grad(gx)

    record_op((out,), backward)
    return out


def avg_downsample2x(x):
    """Halve H and W by averaging non-overlapping 2x2 blocks."""
    x = _lift(x)
    if x.ndim != 3:
        raise ValueError(f"avg_downsample2x expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_downsample2x needs even H and W, got {h}x{w}")
    out = Tensor(
        x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)),
        requires_grad=x.requires_grad,
    )

    def backward():
        g = out.grad
        if g is None:
            return
        gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * x.data.dtype.type(0.25)
        x.accumulate_grad(gx)

    record_op((out,), backward)
    return out
