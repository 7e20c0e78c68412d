"""Square full-res training patches and their matching low-res rectangles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PatchSpec:
    """Axis-aligned square at full resolution, aligned to the upscale grid."""

    x0: int
    y0: int
    size: int
    scale: int

    @property
    def low_x0(self):
        return self.x0 // self.scale

    @property
    def low_y0(self):
        return self.y0 // self.scale

    @property
    def low_size(self):
        return self.size // self.scale


def build_patch_set(width, height, patch_size, scale):
    """Tile an image with stride patch_size; boundary tiles shift inward.

    Every patch is full-size, so edge tiles overlap their neighbours instead
    of shrinking. Raises for patch sizes that do not fit the image or do not
    divide by the upscale factor.
    """
    if patch_size % scale:
        raise ValueError(f"patch size {patch_size} is not divisible by scale {scale}")
    if patch_size // scale < 4:
        raise ValueError(f"patch size {patch_size} at scale {scale} leaves a low-res side < 4")
    if patch_size > width or patch_size > height:
        raise ValueError(
            f"patch size {patch_size} exceeds image extent {width}x{height}")

    def origins(extent):
        xs = list(range(0, extent - patch_size + 1, patch_size))
        if xs[-1] != extent - patch_size:
            xs.append(extent - patch_size)
        return xs

    return [
        PatchSpec(x0=x, y0=y, size=patch_size, scale=scale)
        for y in origins(height)
        for x in origins(width)
    ]


def extract_full(view, patch):
    """Full-res patch pixels as channel-first float32 [3, N, N]."""
    img = view.pixels_full[patch.y0:patch.y0 + patch.size,
                           patch.x0:patch.x0 + patch.size]
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def extract_low(view, patch):
    """Matching low-res pixels as channel-first float32 [3, n, n]."""
    img = view.pixels_low[patch.low_y0:patch.low_y0 + patch.low_size,
                          patch.low_x0:patch.low_x0 + patch.low_size]
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)
