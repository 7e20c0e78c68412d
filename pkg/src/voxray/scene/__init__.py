from .cameras import Camera, focal_from_angle_x, look_at_pose, spherical_pose
from .dataset import (
    ViewImage,
    box_downscale,
    load_cameras,
    load_dataset,
    load_png,
    save_png,
    write_manifest,
)
from .patches import PatchSpec, build_patch_set, extract_full, extract_low
from .toy import (
    AnalyticScene,
    Sphere,
    default_toy_scene,
    generate_toy_scene,
    render_ground_truth,
    toy_cameras,
)

__all__ = [
    "AnalyticScene",
    "Camera",
    "PatchSpec",
    "Sphere",
    "ViewImage",
    "box_downscale",
    "build_patch_set",
    "default_toy_scene",
    "extract_full",
    "extract_low",
    "focal_from_angle_x",
    "generate_toy_scene",
    "load_cameras",
    "load_dataset",
    "load_png",
    "look_at_pose",
    "render_ground_truth",
    "save_png",
    "spherical_pose",
    "toy_cameras",
    "write_manifest",
]
