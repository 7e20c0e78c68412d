"""Dataset loading: camera manifests plus 8-bit PNG views.

A manifest is a JSON file with `camera_angle_x` and a `frames` list of
{file_path, transform_matrix} entries (camera-to-world, row-major), with
optional top-level near/far. Images are 8-bit PNGs; RGBA content is
alpha-composited over a white background on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .cameras import Camera, focal_from_angle_x

DEFAULT_NEAR = 0.5
DEFAULT_FAR = 6.0


@dataclass
class ViewImage:
    """One posed view with its full-res pixels and box-filtered low-res copy."""

    camera: Camera
    pixels_full: np.ndarray  # [H, W, 3] float32 in [0, 1]
    pixels_low: np.ndarray   # [H/s, W/s, 3]
    name: str = ""


def save_png(path, img):
    """Write [H,W,3] floats as 8-bit RGB; round half-to-even after clamping."""
    arr = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_png(path):
    """Read a PNG as float32 [H,W,3] in [0,1]; RGBA composites over white."""
    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        alpha = arr[:, :, 3:4]
        arr = arr[:, :, :3] * alpha + (1.0 - alpha)
    return np.ascontiguousarray(arr[:, :, :3])


def box_downscale(img, s):
    """Average non-overlapping s x s blocks of an [H,W,C] image."""
    h, w, c = img.shape
    if h % s or w % s:
        raise ValueError(f"image {w}x{h} is not divisible by scale {s}")
    return img.reshape(h // s, s, w // s, s, c).mean(axis=(1, 3)).astype(img.dtype)


def write_manifest(path, camera_angle_x, frames, near=None, far=None):
    blob = {"camera_angle_x": float(camera_angle_x), "frames": frames}
    if near is not None:
        blob["near"] = float(near)
    if far is not None:
        blob["far"] = float(far)
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=1, sort_keys=True)


def _resolve_image_path(root, file_path):
    p = os.path.join(root, file_path)
    if not os.path.splitext(p)[1]:
        p += ".png"
    return os.path.normpath(p)


def load_cameras(manifest_path, width=None, height=None):
    """Read posed cameras from a manifest without touching any images.

    Resolution comes from the `width`/`height` arguments if given, then from
    top-level `w`/`h` manifest keys, then from the size of the first frame's
    image file when one exists next to the manifest.

    Returns a list of (name, Camera) pairs in manifest order.
    """
    with open(manifest_path) as fh:
        meta = json.load(fh)
    frames = meta.get("frames", [])
    if not frames:
        raise ValueError(f"empty manifest: {manifest_path} lists no frames")
    if width is None or height is None:
        if "w" in meta and "h" in meta:
            width, height = int(meta["w"]), int(meta["h"])
        else:
            probe = _resolve_image_path(os.path.dirname(manifest_path) or ".",
                                        frames[0]["file_path"])
            if not os.path.exists(probe):
                raise ValueError(
                    f"{manifest_path} has no w/h keys and {probe} does not exist; "
                    "cannot infer the render resolution")
            with Image.open(probe) as im:
                width, height = im.size
    near = float(meta.get("near", DEFAULT_NEAR))
    far = float(meta.get("far", DEFAULT_FAR))
    focal = focal_from_angle_x(width, meta["camera_angle_x"])
    cams = []
    for i, frame in enumerate(frames):
        name = os.path.splitext(os.path.basename(frame.get("file_path", f"frame_{i}")))[0]
        cams.append((name, Camera(
            width, height, focal,
            np.asarray(frame["transform_matrix"], dtype=np.float64),
            near=near, far=far)))
    return cams


def load_dataset(path, upscale, split="train"):
    """Load every view named by a manifest.

    `path` is a dataset directory containing transforms_<split>.json (or a
    bare transforms.json); `upscale` is the factor s between the stored
    full-res images and the low-res copies attached to each view.
    """
    manifest = os.path.join(path, f"transforms_{split}.json")
    if not os.path.exists(manifest):
        manifest = os.path.join(path, "transforms.json")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest for split '{split}' under {path}")
    with open(manifest) as fh:
        meta = json.load(fh)

    frames = meta.get("frames", [])
    if not frames:
        raise ValueError(f"empty dataset: {manifest} lists no frames")
    near = float(meta.get("near", DEFAULT_NEAR))
    far = float(meta.get("far", DEFAULT_FAR))

    views = []
    shape = None
    for frame in frames:
        name = frame["file_path"]
        img_path = _resolve_image_path(path, name)
        if not os.path.exists(img_path):
            raise FileNotFoundError(f"frame '{name}': image file {img_path} is missing")
        pixels = load_png(img_path)
        if shape is None:
            shape = pixels.shape
        elif pixels.shape != shape:
            raise ValueError(
                f"frame '{name}': size {pixels.shape[1]}x{pixels.shape[0]} differs "
                f"from first frame {shape[1]}x{shape[0]}")
        h, w, _ = pixels.shape
        if h % upscale or w % upscale:
            raise ValueError(
                f"frame '{name}': size {w}x{h} is not divisible by upscale factor {upscale}")
        focal = focal_from_angle_x(w, meta["camera_angle_x"])
        camera = Camera(w, h, focal, np.asarray(frame["transform_matrix"], dtype=np.float64),
                        near=near, far=far)
        views.append(ViewImage(
            camera=camera,
            pixels_full=pixels,
            pixels_low=box_downscale(pixels, upscale),
            name=name,
        ))
    return views
