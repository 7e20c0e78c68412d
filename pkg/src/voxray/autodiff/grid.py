"""Trilinear sampling of a dense voxel grid of per-cell feature vectors."""

from __future__ import annotations

import itertools

import numpy as np

from .tensor import Tensor, _lift, record_op


def trilinear_sample(values, points):
    """Interpolate grid values at continuous grid-space points.

    values: Tensor [C, Nx, Ny, Nz]; points: array-like [P, 3] in grid
    coordinates, where integer coordinates land exactly on vertices.
    Points outside [0, N-1] on any axis yield zeros and no gradient.
    Gradients flow to the grid values only, never to the points.
    """
    values = _lift(values)
    if values.ndim != 4:
        raise ValueError(f"trilinear_sample expects values [C,Nx,Ny,Nz], got {values.shape}")
    dims = np.array(values.shape[1:], dtype=np.int64)
    if np.any(dims < 2):
        raise ValueError(f"every grid dimension must be >= 2, got {tuple(dims)}")
    pts = np.asarray(points.data if isinstance(points, Tensor) else points, dtype=values.dtype)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be [P,3], got {pts.shape}")

    inside = np.all((pts >= 0.0) & (pts <= (dims - 1).astype(pts.dtype)), axis=1)
    q = np.clip(pts, 0.0, (dims - 1).astype(pts.dtype))
    i0 = np.minimum(np.floor(q).astype(np.int64), dims - 2)
    frac = q - i0

    c = values.shape[0]
    p = pts.shape[0]
    flat_vals = values.data.reshape(c, -1)
    ny, nz = int(dims[1]), int(dims[2])

    corner_idx = []
    corner_w = []
    for dx, dy, dz in itertools.product((0, 1), repeat=3):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
        wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
        w = wx * wy * wz * inside
        lin = ((i0[:, 0] + dx) * ny + (i0[:, 1] + dy)) * nz + (i0[:, 2] + dz)
        corner_idx.append(lin)
        corner_w.append(w)

    out_data = np.zeros((p, c), dtype=values.dtype)
    for lin, w in zip(corner_idx, corner_w):
        out_data += flat_vals[:, lin].T * w[:, None]
    out = Tensor(out_data, requires_grad=values.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        nvox = flat_vals.shape[1]
        all_lin = np.concatenate(corner_idx)
        all_w = np.concatenate(corner_w)
        gt = np.ascontiguousarray(g.T)
        gv = np.empty(values.shape, dtype=values.dtype)
        gv_flat = gv.reshape(c, -1)
        contrib = np.empty(8 * p, dtype=np.float64)  # bincount works in doubles
        for ch in range(c):
            np.multiply(all_w, np.tile(gt[ch], 8), out=contrib)
            # assignment casts the double bincount back to the grid dtype
            gv_flat[ch] = np.bincount(all_lin, weights=contrib, minlength=nvox)
        values.accumulate_grad(gv, own=True)

    record_op((out,), backward)
    return out
