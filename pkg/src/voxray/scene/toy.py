"""Synthetic desk-scale scene: striped soft spheres with an analytic field.

The field is exact and cheap, so ground-truth images come from dense
numerical integration of the volume-rendering equation rather than from any
learned component, and tests can query sigma/color at arbitrary points.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .cameras import Camera, focal_from_angle_x, spherical_pose
from .dataset import save_png, write_manifest

DEFAULT_BBOX = 1.2
CAMERA_RADIUS = 4.0
CAMERA_ANGLE_X = 0.7
GT_OVERSAMPLING = 4  # ground-truth integration runs at 4x the training sample count
TRAIN_SAMPLES_DEFAULT = 128


@dataclass
class Sphere:
    """Soft ball: constant density inside `radius`, Gaussian falloff outside."""

    center: tuple
    radius: float
    amplitude: float
    width: float
    color: tuple
    stripe_dir: tuple = (0.0, 0.0, 1.0)
    stripe_freq: float = 0.0
    stripe_amp: float = 0.0

    def density(self, pts):
        d = np.linalg.norm(pts - np.asarray(self.center, dtype=pts.dtype), axis=-1)
        excess = np.maximum(d - self.radius, 0.0) / self.width
        return self.amplitude * np.exp(-0.5 * excess * excess)

    def local_color(self, pts):
        base = np.asarray(self.color, dtype=pts.dtype)
        if self.stripe_freq == 0.0 or self.stripe_amp == 0.0:
            return np.broadcast_to(base, pts.shape).copy()
        direction = np.asarray(self.stripe_dir, dtype=pts.dtype)
        direction = direction / np.linalg.norm(direction)
        phase = np.sin(self.stripe_freq * (pts @ direction))
        return np.clip(base * (1.0 + self.stripe_amp * phase)[..., None], 0.0, 1.0)


@dataclass
class AnalyticScene:
    """Exact density/color field over a bounding box, white background."""

    spheres: list
    bbox_min: tuple = (-DEFAULT_BBOX,) * 3
    bbox_max: tuple = (DEFAULT_BBOX,) * 3
    background: tuple = (1.0, 1.0, 1.0)
    near: float = CAMERA_RADIUS - 2.1
    far: float = CAMERA_RADIUS + 2.1

    def sigma(self, pts):
        pts = np.asarray(pts)
        total = np.zeros(pts.shape[:-1], dtype=pts.dtype)
        for sp in self.spheres:
            total += sp.density(pts)
        return total

    def color(self, pts):
        """Density-weighted mixture of the spheres' striped colors."""
        pts = np.asarray(pts)
        eps = np.asarray(1e-9, dtype=pts.dtype)
        num = np.zeros(pts.shape[:-1] + (3,), dtype=pts.dtype)
        den = np.zeros(pts.shape[:-1], dtype=pts.dtype)
        bg = np.asarray(self.background, dtype=pts.dtype)
        for sp in self.spheres:
            w = sp.density(pts)
            num += w[..., None] * sp.local_color(pts)
            den += w
        return (num + eps * bg) / (den + eps)[..., None]

    def to_json(self):
        return {
            "bbox_min": list(self.bbox_min),
            "bbox_max": list(self.bbox_max),
            "background": list(self.background),
            "near": self.near,
            "far": self.far,
            "spheres": [
                {
                    "center": list(sp.center),
                    "radius": sp.radius,
                    "amplitude": sp.amplitude,
                    "width": sp.width,
                    "color": list(sp.color),
                    "stripe_dir": list(sp.stripe_dir),
                    "stripe_freq": sp.stripe_freq,
                    "stripe_amp": sp.stripe_amp,
                }
                for sp in self.spheres
            ],
        }

    @classmethod
    def from_json(cls, blob):
        spheres = [
            Sphere(
                center=tuple(s["center"]),
                radius=s["radius"],
                amplitude=s["amplitude"],
                width=s["width"],
                color=tuple(s["color"]),
                stripe_dir=tuple(s["stripe_dir"]),
                stripe_freq=s["stripe_freq"],
                stripe_amp=s["stripe_amp"],
            )
            for s in blob["spheres"]
        ]
        return cls(
            spheres=spheres,
            bbox_min=tuple(blob["bbox_min"]),
            bbox_max=tuple(blob["bbox_max"]),
            background=tuple(blob["background"]),
            near=blob["near"],
            far=blob["far"],
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def default_toy_scene(seed=0):
    """Three striped spheres with seed-jittered placement."""
    rng = np.random.default_rng(seed)
    presets = [
        ((-0.45, -0.38, -0.12), 0.42, (0.85, 0.25, 0.20), (1.0, 0.6, 0.3), 24.0),
        ((0.52, 0.18, 0.22), 0.38, (0.20, 0.70, 0.30), (0.2, 1.0, 0.5), 30.0),
        ((0.02, 0.42, -0.35), 0.34, (0.25, 0.35, 0.85), (0.6, 0.2, 1.0), 18.0),
    ]
    spheres = []
    for center, radius, color, stripe_dir, freq in presets:
        jitter = rng.uniform(-0.05, 0.05, size=3)
        spheres.append(Sphere(
            center=tuple(np.asarray(center) + jitter),
            radius=radius * float(rng.uniform(0.95, 1.05)),
            amplitude=30.0,
            width=0.04,
            color=color,
            stripe_dir=stripe_dir,
            stripe_freq=freq,
            stripe_amp=0.35,
        ))
    return AnalyticScene(spheres=spheres)


def render_ground_truth(scene, camera, n_samples, row_chunk=16):
    """Integrate the analytic field along every pixel ray (midpoint rule).

    Returns (rgb [H,W,3], depth [H,W], acc [H,W]) with the white background
    already composited into rgb via the residual transmittance.
    """
    h, w = camera.height, camera.width
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    depth = np.zeros((h, w), dtype=np.float32)
    acc = np.zeros((h, w), dtype=np.float32)
    step = (camera.far - camera.near) / n_samples
    t = (camera.near + (np.arange(n_samples, dtype=np.float32) + 0.5) * step)

    for row0 in range(0, h, row_chunk):
        rows = np.arange(row0, min(row0 + row_chunk, h))
        vv, uu = np.meshgrid(rows + 0.5, np.arange(w) + 0.5, indexing="ij")
        origins, dirs = camera.rays(uu.ravel(), vv.ravel())
        pts = (origins[:, None, :] + t[None, :, None] * dirs[:, None, :]).astype(np.float32)
        sig = scene.sigma(pts)
        col = scene.color(pts)
        tau = sig * step
        transmit = np.exp(-np.concatenate(
            [np.zeros((len(tau), 1), dtype=tau.dtype), np.cumsum(tau, axis=1)], axis=1))
        alpha = -np.expm1(-tau)
        weights = transmit[:, :-1] * alpha
        shape = (len(rows), w)
        rgb[rows] = (np.einsum("rn,rnc->rc", weights, col)
                     + transmit[:, -1:] * np.asarray(scene.background, dtype=np.float32)
                     ).reshape(shape + (3,))
        depth[rows] = (weights * t[None, :]).sum(axis=1).reshape(shape)
        acc[rows] = weights.sum(axis=1).reshape(shape)
    return rgb, depth, acc


def toy_cameras(n_views, resolution, scene, seed, test=False):
    """Deterministic ring of poses; the test ring is offset in azimuth."""
    rng = np.random.default_rng(seed + (1 if test else 0))
    focal = focal_from_angle_x(resolution, CAMERA_ANGLE_X)
    cams = []
    for i in range(n_views):
        az = 360.0 * i / n_views + (180.0 / n_views if test else 0.0)
        az += float(rng.uniform(-4.0, 4.0))
        el = float(rng.uniform(-40.0, -18.0))
        pose = spherical_pose(az, el, CAMERA_RADIUS)
        cams.append(Camera(resolution, resolution, focal, pose,
                           near=scene.near, far=scene.far))
    return cams


def generate_toy_scene(out_dir, n_views=20, resolution=128, seed=0, n_test=5,
                       train_samples=TRAIN_SAMPLES_DEFAULT):
    """Write a complete dataset: train/test manifests, PNGs, scene.json.

    Ground truth integrates the field at GT_OVERSAMPLING x train_samples.
    Everything is a pure function of the arguments, so a repeated call with
    the same seed reproduces every byte.
    """
    scene = default_toy_scene(seed)
    gt_samples = GT_OVERSAMPLING * train_samples
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "scene.json"), "w") as fh:
        json.dump(scene.to_json(), fh, indent=1, sort_keys=True)

    for split, count in (("train", n_views), ("test", n_test)):
        cams = toy_cameras(count, resolution, scene, seed, test=(split == "test"))
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        frames = []
        for i, cam in enumerate(cams):
            rgb, _, _ = render_ground_truth(scene, cam, gt_samples)
            rel = f"./{split}/r_{i}"
            save_png(os.path.join(out_dir, f"{rel[2:]}.png"), rgb)
            frames.append({"file_path": rel, "transform_matrix": cam.c2w.tolist()})
        write_manifest(
            os.path.join(out_dir, f"transforms_{split}.json"),
            camera_angle_x=CAMERA_ANGLE_X, frames=frames,
            near=scene.near, far=scene.far)
    return scene
