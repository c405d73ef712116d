"""
Pointmaps: depth maps lifted to world-space point clouds with pixel provenance,
and per-instance segmentation by binary masks.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from geometry.core import PinholeCamera, PointCloud
from geometry.errors import EmptyInput, EmptyInstance, InvalidInput, ShapeError


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Camera-frame Z per pixel; non-positive or non-finite values are invalid."""
    depth: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float64)
        if depth.ndim != 2:
            raise ShapeError(f"depth map must be 2D, got shape {depth.shape}")
        depth.setflags(write=False)
        object.__setattr__(self, "depth", depth)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True, eq=False)
class InstanceMask:
    mask: np.ndarray
    instance_id: int = 0
    label: str = ""

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ShapeError(f"instance mask must be 2D, got shape {mask.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def tag(self) -> str:
        return f"{self.label or 'instance'}#{self.instance_id}"


def depth_to_pointmap(cam: PinholeCamera, depth: DepthMap,
                      colors: Optional[np.ndarray] = None) -> PointCloud:
    """One world point per valid pixel, in row-major pixel order."""
    if (depth.height, depth.width) != (cam.height, cam.width):
        raise ShapeError(f"depth map is {depth.width}x{depth.height}, "
                         f"camera is {cam.width}x{cam.height}")
    valid = depth.valid
    rows, cols = np.nonzero(valid)
    if rows.size == 0:
        raise EmptyInput("depth map has no valid pixels")
    uv = np.stack([cols + 0.5, rows + 0.5], axis=1)
    points = cam.unproject_pixels(uv, depth.depth[rows, cols])

    point_colors = None
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64)
        if colors.shape[:2] != depth.depth.shape:
            raise ShapeError(f"color image shape {colors.shape} does not match depth {depth.depth.shape}")
        point_colors = np.clip(colors[rows, cols, :3], 0.0, 1.0)
    return PointCloud(points=points, colors=point_colors, pixels=np.stack([rows, cols], axis=1))


def segment_instance(pointmap: PointCloud, mask: InstanceMask) -> PointCloud:
    """Points whose source pixel is set in the mask."""
    if pointmap.pixels is None:
        raise InvalidInput("segment_instance needs a pointmap with pixel provenance")
    px = pointmap.pixels
    if px.size and (px[:, 0].max() >= mask.height or px[:, 1].max() >= mask.width):
        raise ShapeError(f"mask {mask.width}x{mask.height} is smaller than the pointmap's image")
    keep = mask.mask[px[:, 0], px[:, 1]]
    if not keep.any():
        raise EmptyInstance(f"mask {mask.tag} selects no valid depth pixels")
    return pointmap.subset(keep)


def mask_out_foreground(depth: DepthMap, masks: Sequence[InstanceMask]) -> DepthMap:
    """Invalidate every pixel covered by a foreground instance mask."""
    out = np.array(depth.depth)
    for m in masks:
        if m.mask.shape != out.shape:
            raise ShapeError(f"mask {m.tag} shape {m.mask.shape} does not match depth {out.shape}")
        out[m.mask] = 0.0
    return DepthMap(out)
