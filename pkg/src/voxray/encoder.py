"""Voxel radiance-field encoder rendered at low resolution.

Two dense grids (scalar density, 12-channel appearance features) are sampled
trilinearly along camera rays. A small MLP turns interpolated features plus
positionally encoded location/direction into a compact per-sample feature
vector; compositing accumulates those vectors, the per-sample depths, and a
low-res RGB preview in a single fused pass per patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, record_op
from .autodiff.tensor import _lift

COLOR_CHANNELS = 12
FEATURE_DIM = 6
MLP_WIDTH = 64
PE_X_FREQS = 4
PE_D_FREQS = 2
DENSITY_INIT_RAW = -5.0
DEFAULT_N_SAMPLES = 128


class VoxelGrid:
    """Dense per-vertex feature grid over an axis-aligned world box."""

    def __init__(self, dims, channels, bbox_min, bbox_max, fill=0.0, dtype=np.float32):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or any(d < 2 for d in dims):
            raise ValueError(f"grid dims must be three values >= 2, got {dims}")
        self.dims = dims
        self.channels = int(channels)
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64)
        if np.any(self.bbox_max <= self.bbox_min):
            raise ValueError("bbox_max must exceed bbox_min on every axis")
        self.values = Tensor(np.full((channels,) + dims, fill, dtype=dtype),
                             requires_grad=True)

    def world_to_grid(self, pts):
        pts = np.asarray(pts)
        scale = (np.asarray(self.dims) - 1) / (self.bbox_max - self.bbox_min)
        return ((pts - self.bbox_min) * scale).astype(pts.dtype)

    def contains(self, pts):
        pts = np.asarray(pts)
        return np.all((pts >= self.bbox_min) & (pts <= self.bbox_max), axis=-1)

    def sample(self, pts_world):
        """Trilinear interpolation at world points; zeros outside the box."""
        return ad.trilinear_sample(self.values, self.world_to_grid(pts_world))


def positional_encoding(x, n_freqs):
    """[x, sin(2^k x), cos(2^k x)] for k < n_freqs; plain array, no gradient."""
    x = np.asarray(x)
    parts = [x]
    for k in range(n_freqs):
        scaled = (2.0 ** k) * x
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


def composite(sigma, values, delta):
    """Fused front-to-back compositing of per-sample values along rays.

    sigma: Tensor [R, N], non-negative densities. values: Tensor [R, N, C].
    delta: array [R, N] of positive sample spacings. Returns the accumulated
    values [R, C] and the residual transmittance past the last sample [R, 1].

    The backward works in optical-depth space (x = sigma * delta), where
    weights telescope as w_i = T_i - T_{i+1}: with s_i the per-sample upstream
    sensitivity, dL/dx_i = T_{i+1} s_i - sum_{k>i} w_k s_k - T_{N+1} g_resid.
    The suffix-sum form never divides by (1 - alpha), so fully opaque samples
    are safe.
    """
    sigma = _lift(sigma)
    values = _lift(values)
    delta = np.asarray(delta.data if isinstance(delta, Tensor) else delta,
                       dtype=sigma.dtype)
    if sigma.ndim != 2 or values.ndim != 3 or sigma.shape != values.shape[:2]:
        raise ValueError(
            f"composite expects sigma [R,N] and values [R,N,C], got {sigma.shape}, {values.shape}")
    if delta.shape != sigma.shape:
        raise ValueError(f"delta must match sigma shape {sigma.shape}, got {delta.shape}")
    if np.any(sigma.data < 0):
        raise ValueError("composite requires non-negative densities")
    if np.any(delta <= 0):
        raise ValueError("composite requires strictly positive spacings")

    x = sigma.data * delta
    r = x.shape[0]
    cum = np.concatenate([np.zeros((r, 1), dtype=x.dtype), np.cumsum(x, axis=1)], axis=1)
    transmit = np.exp(-cum)                      # [R, N+1], T_1 = 1
    alpha = -np.expm1(-x)
    weights = transmit[:, :-1] * alpha           # [R, N]
    accum = np.einsum("rn,rnc->rc", weights, values.data)
    resid = transmit[:, -1:].copy()

    needs_grad = sigma.requires_grad or values.requires_grad
    out = Tensor(accum, requires_grad=needs_grad)
    res = Tensor(resid, requires_grad=needs_grad)

    def backward():
        g_out, g_res = out.grad, res.grad
        if g_out is None and g_res is None:
            return
        if g_out is None:
            g_out = np.zeros_like(accum)
        if g_res is None:
            g_res = np.zeros_like(resid)
        if values.requires_grad:
            values.accumulate_grad(weights[:, :, None] * g_out[:, None, :])
        if sigma.requires_grad:
            s = np.einsum("rc,rnc->rn", g_out, values.data)
            q = weights * s
            incl = np.cumsum(q[:, ::-1], axis=1)[:, ::-1]       # sum_{k>=i} q_k
            suffix = np.concatenate(
                [incl[:, 1:], np.zeros((r, 1), dtype=q.dtype)], axis=1)
            grad_x = transmit[:, 1:] * s - (suffix + resid * g_res)
            sigma.accumulate_grad(grad_x * delta)

    record_op((out, res), backward)
    return out, res


def composite_from_alpha(alpha, values):
    """Compositing from per-sample opacities instead of densities.

    Converts alpha to optical depth (-log(1 - alpha), unit spacing) and runs
    the fused op; alpha = 1 is allowed and makes the sample fully opaque.
    Gradients flow to `values` only.
    """
    alpha = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("opacities must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        x = -np.log1p(-alpha)
    return composite(Tensor(x), values, np.ones_like(alpha))


@dataclass
class RaySamples:
    """One ray's quadrature: positions [N,3], distances t [N], spacings [N-1]."""

    origin: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    delta: np.ndarray
    positions: np.ndarray


def _sample_distances(near, far, n_samples, count, jitter, rng, dtype):
    """Per-ray sample distances: uniform grid, optionally jittered in-cell.

    The base grid is linspace(near, far, N). Each sample may move uniformly
    within its half-spacing cell (clipped at near/far), which keeps ordering
    strict and every t inside [near, far].
    """
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples per ray, got {n_samples}")
    base = np.linspace(near, far, n_samples, dtype=np.float64)
    t = np.broadcast_to(base, (count, n_samples)).copy()
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        h = (far - near) / (n_samples - 1)
        lo = np.maximum(base - 0.5 * h, near)
        hi = np.minimum(base + 0.5 * h, far)
        u = rng.random((count, n_samples))
        t = lo + u * (hi - lo)
    return t.astype(dtype)


def sample_ray(camera, pixel, n_samples, jitter=False, rng=None, upscale=1):
    """Ray through the center of low-res pixel (ix, iy) at the given upscale.

    Low-res pixel (i, j) maps to full-res coordinates ((i + 0.5) s, (j + 0.5) s).
    """
    ix, iy = pixel
    u = (ix + 0.5) * upscale
    v = (iy + 0.5) * upscale
    origins, dirs = camera.rays([u], [v])
    t = _sample_distances(camera.near, camera.far, n_samples, 1, jitter, rng,
                          np.float64)[0]
    positions = origins[0] + t[:, None] * dirs[0]
    return RaySamples(origin=origins[0], direction=dirs[0], t=t,
                      delta=np.diff(t), positions=positions)


def rect_rays(camera, x0, y0, width, height, scale, n_samples, jitter=False,
              rng=None, dtype=np.float32):
    """Rays for a rectangle of low-res pixels, row-major.

    (x0, y0, width, height) are low-res pixel coordinates; scale maps them to
    the full-res sensor.  Returns (origins [R,3], dirs [R,3], t [R,N],
    delta [R,N]).  The trailing spacing is the nominal grid step so the last
    sample still occupies a cell.
    """
    iy, ix = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    u = (x0 + ix.ravel() + 0.5) * scale
    v = (y0 + iy.ravel() + 0.5) * scale
    origins, dirs = camera.rays(u, v)
    rays = width * height
    t = _sample_distances(camera.near, camera.far, n_samples, rays, jitter,
                          rng, np.float64)
    h = (camera.far - camera.near) / (n_samples - 1)
    delta = np.concatenate(
        [np.diff(t, axis=1), np.full((rays, 1), h, dtype=t.dtype)], axis=1)
    return (origins.astype(dtype), dirs.astype(dtype),
            t.astype(dtype), delta.astype(dtype))


def patch_rays(camera, patch, n_samples, jitter=False, rng=None, dtype=np.float32):
    """Rays for every low-res pixel of a square patch, row-major."""
    return rect_rays(camera, patch.low_x0, patch.low_y0, patch.low_size,
                     patch.low_size, patch.scale, n_samples, jitter, rng, dtype)


@dataclass
class EncoderOutput:
    """Low-res maps produced for one patch, all channel-first Tensors."""

    features: Tensor   # [C', h, w]
    depth: Tensor      # [h, w]
    rgb_low: Tensor    # [3, h, w]


def _linear(x, w, b):
    return ad.add(ad.matmul(x, w), b)


class FieldEncoder:
    """Density/appearance grids plus the per-sample feature MLP and rgb head."""

    def __init__(self, grid_dims, bbox_min, bbox_max, *, color_channels=COLOR_CHANNELS,
                 mlp_width=MLP_WIDTH, feature_dim=FEATURE_DIM, pe_x_freqs=PE_X_FREQS,
                 pe_d_freqs=PE_D_FREQS, density_init=DENSITY_INIT_RAW, rng=None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dtype = np.dtype(dtype)
        self.feature_dim = feature_dim
        self.pe_x_freqs = pe_x_freqs
        self.pe_d_freqs = pe_d_freqs
        self.density_grid = VoxelGrid(grid_dims, 1, bbox_min, bbox_max,
                                      fill=density_init, dtype=dtype)
        self.color_grid = VoxelGrid(grid_dims, color_channels, bbox_min, bbox_max,
                                    fill=0.0, dtype=dtype)
        in_dim = color_channels + 3 * (1 + 2 * pe_x_freqs) + 3 * (1 + 2 * pe_d_freqs)
        self.in_dim = in_dim

        def init(shape, fan_in, gain=2.0):
            std = np.sqrt(gain / fan_in)
            return Tensor((rng.standard_normal(shape) * std).astype(dtype),
                          requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        self.mlp_w1 = init((in_dim, mlp_width), in_dim)
        self.mlp_b1 = zeros(mlp_width)
        self.mlp_w2 = init((mlp_width, mlp_width), mlp_width)
        self.mlp_b2 = zeros(mlp_width)
        self.mlp_w_out = init((mlp_width, feature_dim), mlp_width, gain=1.0)
        self.mlp_b_out = zeros(feature_dim)
        self.rgb_w = init((feature_dim, 3), feature_dim, gain=1.0)
        self.rgb_b = zeros(3)

    def parameters(self):
        return {
            "density_grid": self.density_grid.values,
            "color_grid": self.color_grid.values,
            "mlp.w1": self.mlp_w1,
            "mlp.b1": self.mlp_b1,
            "mlp.w2": self.mlp_w2,
            "mlp.b2": self.mlp_b2,
            "mlp.w_out": self.mlp_w_out,
            "mlp.b_out": self.mlp_b_out,
            "rgb_head.w": self.rgb_w,
            "rgb_head.b": self.rgb_b,
        }

    def query_density(self, pts):
        """Non-negative density at world points; exactly zero outside the box."""
        pts = np.asarray(pts, dtype=self.dtype)
        raw = self.density_grid.sample(pts)
        mask = self.density_grid.contains(pts).astype(self.dtype)[:, None]
        return ad.mul(ad.softplus(raw), Tensor(mask))

    def query_color_features(self, pts, dirs):
        """Per-sample feature vectors g(interp(x), x, d), shape [P, C']."""
        pts = np.asarray(pts, dtype=self.dtype)
        dirs = np.asarray(dirs, dtype=self.dtype)
        feats = self.color_grid.sample(pts)
        enc = np.concatenate([
            positional_encoding(pts, self.pe_x_freqs),
            positional_encoding(dirs, self.pe_d_freqs),
        ], axis=1).astype(self.dtype)
        h = ad.concat([feats, Tensor(enc)], axis=1)
        h = ad.leaky_relu(_linear(h, self.mlp_w1, self.mlp_b1))
        h = ad.leaky_relu(_linear(h, self.mlp_w2, self.mlp_b2))
        return _linear(h, self.mlp_w_out, self.mlp_b_out)

    def rgb_from_features(self, f):
        """Foreground color from accumulated ray features (linear + sigmoid)."""
        return ad.sigmoid(_linear(f, self.rgb_w, self.rgb_b))

    def render_rays(self, origins, dirs, t, delta):
        """March a flat batch of rays; returns (features [R,F], depth [R,1],
        rgb [R,3]) Tensors.

        The white background enters rgb through the residual transmittance;
        features and depth accumulate foreground only.
        """
        rays, n_samples = t.shape
        pts = (origins[:, None, :] + t[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
        dirs_rep = np.repeat(dirs, n_samples, axis=0)

        sigma = ad.reshape(self.query_density(pts), (rays, n_samples))
        g = ad.reshape(self.query_color_features(pts, dirs_rep),
                       (rays, n_samples, self.feature_dim))
        vals = ad.concat([g, Tensor(t[:, :, None])], axis=2)
        accum, resid = composite(sigma, vals, delta)

        f = ad.narrow(accum, 1, 0, self.feature_dim)
        depth = ad.narrow(accum, 1, self.feature_dim, 1)
        fg = self.rgb_from_features(f)
        white = Tensor(np.ones((), dtype=self.dtype))
        rgb = ad.add(fg, ad.mul(resid, ad.sub(white, fg)))
        return f, depth, rgb

    def render_rect_lowres(self, camera, x0, y0, width, height, scale,
                           n_samples=DEFAULT_N_SAMPLES, jitter=False, rng=None):
        """Render a low-res pixel rectangle into channel-first maps."""
        origins, dirs, t, delta = rect_rays(camera, x0, y0, width, height,
                                            scale, n_samples, jitter, rng,
                                            dtype=self.dtype)
        f, depth, rgb = self.render_rays(origins, dirs, t, delta)
        return EncoderOutput(
            features=ad.transpose(ad.reshape(f, (height, width, self.feature_dim)),
                                  (2, 0, 1)),
            depth=ad.reshape(depth, (height, width)),
            rgb_low=ad.transpose(ad.reshape(rgb, (height, width, 3)), (2, 0, 1)),
        )

    def render_patch_lowres(self, camera, patch, n_samples=DEFAULT_N_SAMPLES,
                            jitter=False, rng=None):
        """Render one training patch at low resolution."""
        return self.render_rect_lowres(camera, patch.low_x0, patch.low_y0,
                                       patch.low_size, patch.low_size,
                                       patch.scale, n_samples, jitter, rng)
