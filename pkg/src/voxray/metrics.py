"""Image metrics and inference-time rendering.

PSNR and SSIM operate on [H,W] or [H,W,3] arrays with values in [0,1];
3-channel inputs are reduced to luma first.  `render_view` marches every
low-res ray of a camera in fixed-size chunks (chunking never changes the
image) and decodes the assembled feature map in one pass.
"""

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .autodiff import transpose as ttranspose
from .decoder import normalize_depth
from .encoder import rect_rays
from .losses import LUMA_WEIGHTS

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.asarray(LUMA_WEIGHTS)
    if img.ndim == 2:
        return img
    raise ValueError(f"expected [H,W] or [H,W,3] image, got shape {img.shape}")


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] images, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b) -> float:
    """Mean local SSIM over valid (fully inside) window positions."""
    x = _to_luma(a)
    y = _to_luma(b)
    if x.shape != y.shape:
        raise ValueError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}px, "
                         f"got {x.shape}")
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def windowed_mean(img):
        view = np.lib.stride_tricks.sliding_window_view(
            img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.einsum("hwij,ij->hw", view, w)

    mu_x = windowed_mean(x)
    mu_y = windowed_mean(y)
    var_x = windowed_mean(x * x) - mu_x ** 2
    var_y = windowed_mean(y * y) - mu_y ** 2
    cov = windowed_mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


# --- bicubic reference upsampler ---------------------------------------------

def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    inner = (a + 2) * at ** 3 - (a + 3) * at ** 2 + 1
    outer = a * at ** 3 - 5 * a * at ** 2 + 8 * a * at - 4 * a
    return np.where(at <= 1, inner, np.where(at < 2, outer, 0.0))


def _bicubic_axis_weights(n_in: int, scale: int) -> np.ndarray:
    """Dense [n_out, n_in] row-stochastic weight matrix, edges replicated."""
    src = (np.arange(n_in * scale) + 0.5) / scale - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((n_in * scale, n_in))
    for tap in (-1, 0, 1, 2):
        idx = base + tap
        w = _cubic_kernel(src - idx)
        np.add.at(mat, (np.arange(len(src)), np.clip(idx, 0, n_in - 1)), w)
    return mat


def bicubic_upsample(img, scale: int) -> np.ndarray:
    """Catmull-Rom upsampling of an [H,W] or [H,W,C] image by an integer factor."""
    if scale < 1 or int(scale) != scale:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    img = np.asarray(img, dtype=np.float64)
    if scale == 1:
        return img.copy()
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    wr = _bicubic_axis_weights(img.shape[0], scale)
    wc = _bicubic_axis_weights(img.shape[1], scale)
    out = np.einsum("oh,hwc->owc", wr, img)
    out = np.einsum("ow,hwc->hoc", wc, out)
    return out[:, :, 0] if squeeze else out


# --- full-view rendering ------------------------------------------------------

@dataclass
class RenderResult:
    full: np.ndarray | None   # [H, W, 3] decoded image, None without a decoder
    low: np.ndarray           # [h, w, 3] volume-rendered preview
    depth: np.ndarray         # [h, w]
    seconds: float


def render_view(encoder, decoder, camera, *, n_samples, chunk: int = 4096,
                upscale: int | None = None) -> RenderResult:
    """Render one camera view; chunk is the number of rays per encoder pass.

    With a decoder, `upscale` comes from its config; without one, pass the
    factor explicitly to position the low-res rays on the sensor.
    """
    if chunk < 1:
        raise ValueError("chunk must be at least 1")
    scale = decoder.config.upscale if decoder is not None else upscale
    if scale is None:
        raise ValueError("need a decoder or an explicit upscale factor")
    if camera.width % scale or camera.height % scale:
        raise ValueError(f"camera {camera.width}x{camera.height} is not "
                         f"divisible by upscale {scale}")
    w_low, h_low = camera.width // scale, camera.height // scale

    start = time.perf_counter()
    origins, dirs, t, delta = rect_rays(camera, 0, 0, w_low, h_low, scale,
                                        n_samples, dtype=encoder.dtype)
    rays = origins.shape[0]
    feats = np.empty((rays, encoder.feature_dim), dtype=encoder.dtype)
    depth = np.empty((rays, 1), dtype=encoder.dtype)
    rgb = np.empty((rays, 3), dtype=encoder.dtype)
    for i in range(0, rays, chunk):
        j = min(i + chunk, rays)
        f, d, c = encoder.render_rays(origins[i:j], dirs[i:j], t[i:j],
                                      delta[i:j])
        feats[i:j] = f.data
        depth[i:j] = d.data
        rgb[i:j] = c.data

    low = rgb.reshape(h_low, w_low, 3)
    depth_map = depth.reshape(h_low, w_low)
    full = None
    if decoder is not None:
        f_map = Tensor(np.ascontiguousarray(
            feats.reshape(h_low, w_low, encoder.feature_dim).transpose(2, 0, 1)))
        d_norm = normalize_depth(Tensor(depth_map), camera.near, camera.far)
        out = decoder(f_map, d_norm if decoder.config.modulate else None)
        full = ttranspose(out, (1, 2, 0)).data
    return RenderResult(full=full, low=low, depth=depth_map,
                        seconds=time.perf_counter() - start)


# --- dataset evaluation -------------------------------------------------------

@dataclass
class MetricReport:
    per_view: list
    mean_psnr: float | None
    mean_ssim: float | None
    mean_psnr_low: float

    def to_dict(self) -> dict:
        return {"per_view": self.per_view, "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim, "mean_psnr_low": self.mean_psnr_low}


def evaluate_views(encoder, decoder, views, *, n_samples, chunk: int = 4096,
                   upscale: int | None = None) -> MetricReport:
    """PSNR/SSIM of rendered views against their ground-truth images."""
    if not views:
        raise ValueError("no views to evaluate")
    rows = []
    for view in views:
        res = render_view(encoder, decoder, view.camera, n_samples=n_samples,
                          chunk=chunk, upscale=upscale)
        row = {"name": view.name, "psnr_low": psnr(res.low, view.pixels_low)}
        if res.full is not None:
            row["psnr"] = psnr(res.full, view.pixels_full)
            row["ssim"] = ssim(res.full, view.pixels_full)
        rows.append(row)
    has_full = all("psnr" in r for r in rows)
    return MetricReport(
        per_view=rows,
        mean_psnr=float(np.mean([r["psnr"] for r in rows])) if has_full else None,
        mean_ssim=float(np.mean([r["ssim"] for r in rows])) if has_full else None,
        mean_psnr_low=float(np.mean([r["psnr_low"] for r in rows])),
    )


def consistency_strip(frames, column: int, strip_height: int | None = None):
    """Stack a vertical pixel segment from each frame side by side.

    The segment is centered vertically; the result has one column per frame,
    making cross-view texture jitter visible as horizontal waviness.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    frames = [np.asarray(f) for f in frames]
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ValueError("all frames must have the same shape")
    h = shape[0]
    if not 0 <= column < shape[1]:
        raise ValueError(f"column {column} out of bounds for width {shape[1]}")
    strip_height = h if strip_height is None else strip_height
    if not 0 < strip_height <= h:
        raise ValueError(f"strip height {strip_height} out of bounds for "
                         f"height {h}")
    r0 = (h - strip_height) // 2
    return np.stack([f[r0:r0 + strip_height, column] for f in frames], axis=1)
