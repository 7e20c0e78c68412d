"""voxray: a desk-scale voxel radiance field with a detail-recovering decoder."""

__version__ = "0.1.0"
