"""Convolutional detail decoder.

Turns the low-resolution feature image and depth map produced by the field
encoder into a full-resolution RGB image.  The decoder is a stack of residual
conv blocks whose activations are rescaled per channel by an affine function
of the normalized depth map, followed by a bilinear-upsample + conv head.

The depth modulators start as an exact identity (scale one, shift zero), so
an untrained decoder behaves identically with modulation on or off.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, conv2d, leaky_relu, upsample_bilinear2x

RESIDUAL_SCALE = 0.2


@dataclass(frozen=True)
class DecoderConfig:
    in_channels: int = 6
    width: int = 64
    n_blocks: int = 4
    upscale: int = 4
    modulate: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.width < 1 or self.n_blocks < 1:
            raise ValueError("in_channels, width and n_blocks must be positive")
        s = self.upscale
        if s < 1 or (s & (s - 1)) != 0:
            raise ValueError(f"upscale must be a power of two >= 1, got {s}")

    @property
    def n_upsample_stages(self) -> int:
        return int(self.upscale).bit_length() - 1


def normalize_depth(depth, near: float, far: float):
    """Map ray depth to [0, 1]; background (depth 0) clamps to 0."""
    if not far > near:
        raise ValueError("far must exceed near")
    scaled = ad.mul(ad.sub(depth, float(near)), 1.0 / (far - near))
    return ad.clamp01(scaled)


def apply_modulation(x, depth_norm, weight, bias):
    """Per-channel affine rescale of x driven by a 1x1 conv over depth."""
    c = x.shape[0]
    gb = conv2d(depth_norm, weight, bias)
    gamma = ad.narrow(gb, 0, 0, c)
    beta = ad.narrow(gb, 0, c, c)
    return ad.add(ad.mul(gamma, x), beta)


class _Conv:
    """Weight/bias pair for one conv layer."""

    def __init__(self, c_out, c_in, k, rng, dtype, gain=2.0):
        fan_in = c_in * k * k
        std = np.sqrt(gain / fan_in)
        self.w = Tensor((rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.w, self.b)


class DetailDecoder:
    def __init__(self, config: DecoderConfig | None = None, *, rng=None,
                 dtype=np.float32):
        self.config = config or DecoderConfig()
        rng = rng if rng is not None else np.random.default_rng()
        cfg = self.config
        c = cfg.width

        self.conv_in = _Conv(c, cfg.in_channels, 3, rng, dtype)
        self.blocks = []
        self.modulators = []
        for _ in range(cfg.n_blocks):
            self.blocks.append((_Conv(c, c, 3, rng, dtype),
                                _Conv(c, c, 3, rng, dtype, gain=1.0)))
            mod = _Conv(2 * c, 1, 1, rng, dtype)
            # identity init: gamma = 1, beta = 0, no depth influence yet
            mod.w.data[:] = 0.0
            mod.b.data[:c] = 1.0
            mod.b.data[c:] = 0.0
            self.modulators.append(mod)
        self.head = [_Conv(c, c, 3, rng, dtype)
                     for _ in range(cfg.n_upsample_stages)]
        self.conv_out = _Conv(3, c, 3, rng, dtype, gain=1.0)

    def parameters(self) -> dict:
        params = {"decoder.conv_in.w": self.conv_in.w,
                  "decoder.conv_in.b": self.conv_in.b}
        for i, (c1, c2) in enumerate(self.blocks):
            params[f"decoder.block{i}.conv1.w"] = c1.w
            params[f"decoder.block{i}.conv1.b"] = c1.b
            params[f"decoder.block{i}.conv2.w"] = c2.w
            params[f"decoder.block{i}.conv2.b"] = c2.b
        for i, mod in enumerate(self.modulators):
            params[f"modulators.block{i}.w"] = mod.w
            params[f"modulators.block{i}.b"] = mod.b
        for i, conv in enumerate(self.head):
            params[f"decoder.up{i}.w"] = conv.w
            params[f"decoder.up{i}.b"] = conv.b
        params["decoder.conv_out.w"] = self.conv_out.w
        params["decoder.conv_out.b"] = self.conv_out.b
        return params

    def __call__(self, features, depth_norm=None):
        """features: [in_channels, h, w]; depth_norm: [h, w] in [0, 1].

        Returns RGB in [0, 1] at [3, h * upscale, w * upscale].
        """
        cfg = self.config
        if features.shape[0] != cfg.in_channels:
            raise ValueError(
                f"expected {cfg.in_channels} input channels, got {features.shape[0]}")
        if cfg.modulate:
            if depth_norm is None:
                raise ValueError("modulation enabled but no depth map given")
            if depth_norm.shape != features.shape[1:]:
                raise ValueError("depth map does not match feature resolution")
            depth_norm = ad.reshape(depth_norm, (1,) + depth_norm.shape)

        x = leaky_relu(self.conv_in(features))
        for (c1, c2), mod in zip(self.blocks, self.modulators):
            y = c2(leaky_relu(c1(x)))
            x = ad.add(x, ad.mul(y, RESIDUAL_SCALE))
            if cfg.modulate:
                x = apply_modulation(x, depth_norm, mod.w, mod.b)
        for conv in self.head:
            x = leaky_relu(conv(upsample_bilinear2x(x)))
        return ad.sigmoid(self.conv_out(x))
