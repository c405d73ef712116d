"""
Geometric conditioning maps: depth-based edge detection and the 7-channel
normal / position / edge tensor handed to an external image generator.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from geometry.errors import DegenerateBounds, ShapeError

from .rasterizer import GBuffer

DEFAULT_EDGE_THRESHOLD = 0.05
CHANNELS = ("normal_x", "normal_y", "normal_z", "position_x", "position_y", "position_z", "edge")


def edge_map(gbuf: GBuffer, rel_threshold: float = DEFAULT_EDGE_THRESHOLD) -> np.ndarray:
    """
    Covered pixels whose central-difference depth gradient exceeds
    rel_threshold times the covered depth range, plus silhouette pixels
    (covered pixels with an empty or out-of-image 4-neighbor).
    """
    covered = gbuf.coverage
    edges = np.zeros(gbuf.shape, dtype=bool)
    if not covered.any():
        return edges
    depth = gbuf.depth

    padded = np.pad(covered, 1, constant_values=False)
    all_neighbors = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    silhouette = covered & ~all_neighbors

    d = np.pad(depth, 1, mode="edge")
    gx = 0.5 * (d[1:-1, 2:] - d[1:-1, :-2])
    gy = 0.5 * (d[2:, 1:-1] - d[:-2, 1:-1])
    magnitude = np.hypot(gx, gy)

    values = depth[covered]
    depth_range = float(values.max() - values.min())
    # interpolation noise on a constant-depth surface must not count as an edge
    floor = 1e-9 * float(values.max())
    threshold = rel_threshold * max(depth_range, floor)
    edges = silhouette | (all_neighbors & (magnitude > threshold))
    return edges


@dataclass(frozen=True, eq=False)
class ConditionTensor:
    """H x W x 7: normal (n+1)/2, position normalized over `bounds`, binary edge."""
    data: np.ndarray
    bounds: Tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        self.data.setflags(write=False)

    @property
    def normal(self) -> np.ndarray:
        return self.data[..., 0:3]

    @property
    def position(self) -> np.ndarray:
        return self.data[..., 3:6]

    @property
    def edge(self) -> np.ndarray:
        return self.data[..., 6]

    def to_manifest(self) -> dict:
        lo, hi = self.bounds
        return {
            "channels": list(CHANNELS),
            "height": int(self.data.shape[0]),
            "width": int(self.data.shape[1]),
            "normal_encoding": "(n + 1) / 2",
            "position_encoding": "(p - bounds_min) / (bounds_max - bounds_min); flat axes map to 0.5",
            "bounds_min": [float(x) for x in lo],
            "bounds_max": [float(x) for x in hi],
            "background": 0.0,
        }


def pack_condition(gbuf: GBuffer, edges: np.ndarray,
                   bounds: Tuple[np.ndarray, np.ndarray]) -> ConditionTensor:
    """Pack one view; every view of a mesh shares its AABB so positions agree across views."""
    edges = np.asarray(edges, dtype=bool)
    if edges.shape != gbuf.shape:
        raise ShapeError(f"edge map {edges.shape} does not match G-buffer {gbuf.shape}")
    lo = np.asarray(bounds[0], dtype=np.float64).reshape(3)
    hi = np.asarray(bounds[1], dtype=np.float64).reshape(3)
    extent = hi - lo
    if not np.all(np.isfinite(extent)) or np.any(extent < 0) or extent.max() <= 1e-12:
        raise DegenerateBounds(f"degenerate bounds {lo.tolist()} .. {hi.tolist()}")

    covered = gbuf.coverage
    out = np.zeros(gbuf.shape + (7,))
    flat = extent <= 1e-12
    safe = np.where(flat, 1.0, extent)
    position = np.where(flat, 0.5, (gbuf.position[covered] - lo) / safe)
    out[covered, 0:3] = np.clip((gbuf.normal[covered] + 1.0) / 2.0, 0.0, 1.0)
    out[covered, 3:6] = np.clip(position, 0.0, 1.0)
    out[covered, 6] = edges[covered].astype(np.float64)
    return ConditionTensor(data=out, bounds=(lo, hi))
