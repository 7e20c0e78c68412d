"""Finite-difference verification of every differentiable operation.

Each named check builds a small random instance in float64 and compares the
taped gradient against central differences.  Kinked operations (leaky relu,
absolute value, clamp) draw their inputs with a safety margin away from the
kink, where the two-sided difference quotient is meaningless.  Two end-to-end
checks push gradients through the whole pipeline: ray marching into an MSE,
and ray marching through the decoder into the full multi-term objective.
"""

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import (
    Tensor,
    avg_downsample2x,
    conv2d,
    grad_check,
    trilinear_sample,
    upsample_bilinear2x,
)
from .decoder import DecoderConfig, DetailDecoder, normalize_depth
from .encoder import FieldEncoder, composite, composite_from_alpha
from .losses import (
    Discriminator,
    DiscriminatorConfig,
    FilterBankExtractor,
    LossWeights,
    bce_with_logits,
    combined_loss,
    l1_loss,
    mse_loss,
    perceptual_loss,
)
from .scene import Camera, PatchSpec, spherical_pose

GRAD_TOL = 1e-4
KINK_MARGIN = 5e-2


@dataclass
class CheckResult:
    name: str
    max_error: float
    instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < GRAD_TOL


def _t(rng, *shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from(rng, *shape, kinks=(0.0,), margin=KINK_MARGIN, spread=1.5):
    """Values at least `margin` away from every kink location."""
    out = np.empty(shape)
    flat = out.reshape(-1)
    for i in range(flat.size):
        while True:
            v = rng.uniform(-spread, spread)
            if all(abs(v - k) >= margin for k in kinks):
                flat[i] = v
                break
    return Tensor(out, requires_grad=True)


def _scalarize(y):
    return ad.tsum(y) if y.data.ndim else y


def _simple(op, *builders):
    def make(rng):
        inputs = [b(rng) for b in builders]
        return lambda *xs: _scalarize(op(*xs)), inputs
    return make


def _check_add(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4)
    return lambda a, b: ad.tsum(ad.add(a, b)), [a, b]


def _check_sub(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 1)
    return lambda a, b: ad.tsum(ad.sub(a, b)), [a, b]


def _check_mul(rng):
    a, b = _t(rng, 3, 3), _t(rng, 3)
    return lambda a, b: ad.tsum(ad.mul(a, b)), [a, b]


def _check_div(rng):
    a = _t(rng, 3, 4)
    b = _away_from(rng, 3, 4, kinks=(0.0,), margin=0.3)
    return lambda a, b: ad.tsum(ad.div(a, b)), [a, b]


def _check_matmul(rng):
    a, b = _t(rng, 3, 5), _t(rng, 5, 2)
    return lambda a, b: ad.tsum(ad.matmul(a, b)), [a, b]


def _check_log(rng):
    a = _t(rng, 8, lo=0.2, hi=3.0)
    return lambda a: ad.tsum(ad.log(a)), [a]


def _check_concat(rng):
    a, b, c = _t(rng, 2, 3), _t(rng, 2, 2), _t(rng, 2, 4)
    proj = Tensor(rng.standard_normal((2, 9)))
    return (lambda a, b, c:
            ad.tsum(ad.mul(ad.concat([a, b, c], axis=1), proj)), [a, b, c])


def _check_narrow(rng):
    a = _t(rng, 4, 6)
    proj = Tensor(rng.standard_normal((4, 3)))
    return lambda a: ad.tsum(ad.mul(ad.narrow(a, 1, 2, 3), proj)), [a]


def _check_reshape(rng):
    a = _t(rng, 3, 4)
    proj = Tensor(rng.standard_normal(12))
    return lambda a: ad.tsum(ad.mul(ad.reshape(a, (12,)), proj)), [a]


def _check_transpose(rng):
    a = _t(rng, 2, 3, 4)
    proj = Tensor(rng.standard_normal((4, 2, 3)))
    return lambda a: ad.tsum(ad.mul(ad.transpose(a, (2, 0, 1)), proj)), [a]


def _check_sum_axis(rng):
    a = _t(rng, 3, 5)
    proj = Tensor(rng.standard_normal(3))
    return lambda a: ad.tsum(ad.mul(ad.tsum(a, axis=1), proj)), [a]


def _check_mean(rng):
    a = _t(rng, 4, 3)
    proj = Tensor(rng.standard_normal(3))
    return lambda a: ad.tsum(ad.mul(ad.tmean(a, axis=0), proj)), [a]


def _check_conv2d(stride):
    def make(rng):
        x = _t(rng, 2, 7, 6)
        k = _t(rng, 3, 2, 3, 3, lo=-1.0, hi=1.0)
        b = _t(rng, 3)
        proj_shape = (3, 4, 3) if stride == 2 else (3, 7, 6)
        proj = Tensor(rng.standard_normal(proj_shape))
        return (lambda x, k, b:
                ad.tsum(ad.mul(conv2d(x, k, b, stride=stride), proj)), [x, k, b])
    return make


def _check_upsample(rng):
    x = _t(rng, 2, 4, 5)
    proj = Tensor(rng.standard_normal((2, 8, 10)))
    return lambda x: ad.tsum(ad.mul(upsample_bilinear2x(x), proj)), [x]


def _check_downsample(rng):
    x = _t(rng, 2, 6, 4)
    proj = Tensor(rng.standard_normal((2, 3, 2)))
    return lambda x: ad.tsum(ad.mul(avg_downsample2x(x), proj)), [x]


def _check_trilinear(rng):
    values = _t(rng, 2, 4, 3, 4)
    pts = rng.uniform(-0.5, 3.5, size=(15, 3))  # includes out-of-box points
    proj = Tensor(rng.standard_normal((15, 2)))
    return (lambda v: ad.tsum(ad.mul(trilinear_sample(v, pts), proj)), [values])


def _check_composite(rng):
    sigma = _t(rng, 2, 6, lo=0.05, hi=3.0)
    vals = _t(rng, 2, 6, 3)
    delta = rng.uniform(0.1, 0.4, size=(2, 6))
    pa = Tensor(rng.standard_normal((2, 3)))
    pb = Tensor(rng.standard_normal((2, 1)))

    def f(s, v):
        accum, resid = composite(s, v, delta)
        return ad.add(ad.tsum(ad.mul(accum, pa)), ad.tsum(ad.mul(resid, pb)))
    return f, [sigma, vals]


def _check_composite_from_alpha(rng):
    alpha = rng.uniform(0.05, 0.9, size=(2, 5))
    vals = _t(rng, 2, 5, 2)
    pa = Tensor(rng.standard_normal((2, 2)))

    def f(v):
        accum, _ = composite_from_alpha(alpha, v)
        return ad.tsum(ad.mul(accum, pa))
    return f, [vals]


def _check_bce(rng):
    z = _t(rng, 2, 3)
    real = bool(rng.integers(2))
    return lambda z: bce_with_logits(z, real=real), [z]


def _path_encoder_mse(rng):
    """Ray marching straight into a low-res MSE: the pretraining objective."""
    enc = FieldEncoder((3, 3, 3), (-1, -1, -1), (1, 1, 1), color_channels=3,
                       mlp_width=5, feature_dim=2, pe_x_freqs=2, pe_d_freqs=1,
                       rng=rng, dtype=np.float64)
    enc.density_grid.values.data[:] = rng.uniform(
        -1.5, 1.5, size=enc.density_grid.values.shape)
    enc.color_grid.values.data[:] = 0.3 * rng.standard_normal(
        enc.color_grid.values.shape)
    cam = Camera(8, 8, 6.0, spherical_pose(rng.uniform(0, 360), -25.0, 4.0),
                 near=2.2, far=5.8)
    patch = PatchSpec(x0=2, y0=2, size=4, scale=2)
    target = rng.uniform(0.2, 0.8, size=(3, 2, 2))

    def f(*_):
        out = enc.render_patch_lowres(cam, patch, n_samples=5)
        return mse_loss(out.rgb_low, target)
    return f, list(enc.parameters().values())


def _build_full_objective(rng):
    enc = FieldEncoder((3, 3, 3), (-1, -1, -1), (1, 1, 1), color_channels=2,
                       mlp_width=4, feature_dim=2, pe_x_freqs=2, pe_d_freqs=1,
                       rng=rng, dtype=np.float64)
    enc.density_grid.values.data[:] = rng.uniform(
        -1.0, 2.0, size=enc.density_grid.values.shape)
    enc.color_grid.values.data[:] = 0.3 * rng.standard_normal(
        enc.color_grid.values.shape)
    dec = DetailDecoder(DecoderConfig(in_channels=2, width=3, n_blocks=1,
                                      upscale=2), rng=rng, dtype=np.float64)
    for mod in dec.modulators:
        mod.w.data[:] = 0.3 * rng.standard_normal(mod.w.shape)
    disc = Discriminator(DiscriminatorConfig(widths=(3,)), rng=rng,
                         dtype=np.float64)
    ext = FilterBankExtractor(n_levels=2, dtype=np.float64)
    cam = Camera(8, 8, 6.0, spherical_pose(rng.uniform(0, 360), -30.0, 4.0),
                 near=2.2, far=5.8)
    patch = PatchSpec(x0=2, y0=4, size=4, scale=2)
    gt = rng.uniform(0.1, 0.9, size=(3, 4, 4))
    weights = LossWeights(high=1.0, adversarial=0.02, perceptual=0.5, low=1.0)
    gt_low = rng.uniform(0.2, 0.8, size=(3, 2, 2))

    def f(*_):
        out = enc.render_patch_lowres(cam, patch, n_samples=4)
        d_norm = normalize_depth(out.depth, cam.near, cam.far)
        pred = dec(out.features, d_norm)
        terms = {
            "high": l1_loss(pred, gt),
            "low": mse_loss(out.rgb_low, gt_low),
            "perceptual": perceptual_loss(ext, pred, gt),
            "adversarial": bce_with_logits(disc(pred), real=True),
        }
        total, _ = combined_loss(weights, **terms)
        return total

    params = (list(enc.parameters().values()) + list(dec.parameters().values())
              + list(disc.parameters().values()))

    def kink_margin() -> float:
        out = enc.render_patch_lowres(cam, patch, n_samples=4)
        d_norm = normalize_depth(out.depth, cam.near, cam.far)
        pred = dec(out.features, d_norm)
        raw = (out.depth.data - cam.near) / (cam.far - cam.near)
        return min(float(np.min(np.abs(pred.data - gt))),
                   float(np.min(np.abs(raw))),
                   float(np.min(np.abs(raw - 1.0))))

    return f, params, kink_margin


def _path_full_objective(rng):
    """Encoder through decoder into the weighted multi-term training loss.

    The L1 term and the depth clamp are kinked; an instance whose central
    difference would straddle a kink is redrawn from the same stream.
    """
    f = params = None
    for _ in range(50):
        f, params, kink_margin = _build_full_objective(rng)
        if kink_margin() >= 2e-3:
            break
    return f, params


CHECKS = {
    "add": _check_add,
    "sub": _check_sub,
    "mul": _check_mul,
    "div": _check_div,
    "neg": _simple(ad.neg, lambda r: _t(r, 3, 3)),
    "exp": _simple(ad.exp, lambda r: _t(r, 6, lo=-1.5, hi=1.5)),
    "log": _check_log,
    "sigmoid": _simple(ad.sigmoid, lambda r: _t(r, 7, lo=-3.0, hi=3.0)),
    "softplus": _simple(ad.softplus, lambda r: _t(r, 7, lo=-3.0, hi=3.0)),
    "leaky_relu": _simple(ad.leaky_relu, lambda r: _away_from(r, 9)),
    "absolute": _simple(ad.absolute, lambda r: _away_from(r, 9)),
    "clamp01": _simple(ad.clamp01,
                       lambda r: _away_from(r, 9, kinks=(0.0, 1.0))),
    "matmul": _check_matmul,
    "sum": _simple(ad.tsum, lambda r: _t(r, 4, 4)),
    "sum_axis": _check_sum_axis,
    "mean": _check_mean,
    "concat": _check_concat,
    "narrow": _check_narrow,
    "reshape": _check_reshape,
    "transpose": _check_transpose,
    "conv2d_stride1": _check_conv2d(1),
    "conv2d_stride2": _check_conv2d(2),
    "upsample_bilinear2x": _check_upsample,
    "avg_downsample2x": _check_downsample,
    "trilinear_sample": _check_trilinear,
    "composite": _check_composite,
    "composite_from_alpha": _check_composite_from_alpha,
    "bce_with_logits": _check_bce,
    "path_encoder_to_mse": _path_encoder_mse,
    "path_full_objective": _path_full_objective,
}

_PATH_INSTANCES = 20


def run_check(name: str, n_instances: int = 20, seed: int = 0) -> CheckResult:
    if name not in CHECKS:
        raise ValueError(f"unknown check '{name}'; available: "
                         f"{', '.join(sorted(CHECKS))}")
    rng = np.random.default_rng(seed + zlib.crc32(name.encode()))
    start = time.perf_counter()
    worst = 0.0
    count = n_instances if not name.startswith("path_") else _PATH_INSTANCES
    for _ in range(count):
        f, inputs = CHECKS[name](rng)
        worst = max(worst, grad_check(f, inputs))
    return CheckResult(name=name, max_error=worst, instances=count,
                       seconds=time.perf_counter() - start)


def run_suite(module: str | None = None, n_instances: int = 20,
              seed: int = 0) -> list:
    names = sorted(CHECKS)
    if module is not None:
        names = [n for n in names if module in n]
        if not names:
            raise ValueError(f"no checks match '{module}'")
    return [run_check(n, n_instances, seed) for n in names]
