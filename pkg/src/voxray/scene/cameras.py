"""Pinhole cameras in the synthetic-dataset convention.

World is right-handed with z up. A camera looks along its local -z axis,
with +x to the right and +y up in the image plane; pixel rows grow downward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POSE_ORTHO_TOL = 1e-4


@dataclass
class Camera:
    """Full-resolution intrinsics plus a camera-to-world pose."""

    width: int
    height: int
    focal: float
    c2w: np.ndarray
    near: float = 0.5
    far: float = 6.0

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape != (4, 4):
            raise ValueError(f"camera pose must be 4x4, got {self.c2w.shape}")
        rot = self.c2w[:3, :3]
        err = np.max(np.abs(rot @ rot.T - np.eye(3)))
        if err > POSE_ORTHO_TOL:
            raise ValueError(f"camera rotation is not orthonormal (max deviation {err:.2e})")
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")

    @property
    def origin(self):
        return self.c2w[:3, 3].copy()

    def rays(self, u, v):
        """World-space unit rays through continuous full-res pixel coords.

        u is the column coordinate, v the row coordinate; (W/2, H/2) is the
        optical axis. Returns (origins [N,3], directions [N,3]).
        """
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        d_cam = np.stack([
            (u - self.width / 2.0) / self.focal,
            -(v - self.height / 2.0) / self.focal,
            -np.ones_like(u),
        ], axis=-1)
        d_world = d_cam @ self.c2w[:3, :3].T
        d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.c2w[:3, 3], d_world.shape).copy()
        return origins, d_world

    def angle_x(self):
        return 2.0 * np.arctan(0.5 * self.width / self.focal)


def focal_from_angle_x(width, camera_angle_x):
    return 0.5 * width / np.tan(0.5 * camera_angle_x)


def look_at_pose(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """Camera-to-world matrix for a camera at `position` aimed at `target`."""
    position = np.asarray(position, dtype=np.float64)
    view = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(view)
    if norm < 1e-9:
        raise ValueError("camera position coincides with look-at target")
    z_axis = -view / norm
    x_axis = np.cross(np.asarray(up, dtype=np.float64), z_axis)
    x_norm = np.linalg.norm(x_axis)
    if x_norm < 1e-9:
        raise ValueError("up vector is parallel to the view direction")
    x_axis /= x_norm
    y_axis = np.cross(z_axis, x_axis)
    c2w = np.eye(4)
    c2w[:3, 0] = x_axis
    c2w[:3, 1] = y_axis
    c2w[:3, 2] = z_axis
    c2w[:3, 3] = position
    return c2w


def spherical_pose(azimuth_deg, elevation_deg, radius):
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    pos = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return look_at_pose(pos)
