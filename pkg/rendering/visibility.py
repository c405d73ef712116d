"""
Point-to-view visibility against a rendered G-buffer.

A surface point is seen by a view when it projects inside the image and no
triangle found in the 3x3 G-buffer neighborhood of its projection is hit by
the camera ray before it. Hits count as occluding only when nearer than
(1 - depth_tol) times the point's own depth, so the tolerance is relative and
scene scale does not matter.
"""

from typing import Tuple

import numpy as np

from geometry.core import TriangleMesh

from .rasterizer import GBuffer

DEFAULT_DEPTH_TOL = 1e-3
_CHUNK = 65536
_BARY_EPS = 1e-9


def _ray_hits(origin: np.ndarray, targets: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """
    Ray parameter t of the hit between origin -> target (t = 1 at the target)
    and each triangle; inf where the ray misses. Two-sided.
    """
    direction = targets - origin
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    p = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin - corners[:, 0]
    a = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    b = np.einsum("ij,ij->i", direction, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (a >= -_BARY_EPS) & (b >= -_BARY_EPS) & (a + b <= 1.0 + _BARY_EPS) & (t > 0)
    return np.where(hit, t, np.inf)


def project_into(gbuf: GBuffer, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(uv, pixel (row, col), inside) for world points in the G-buffer's camera."""
    cam = gbuf.camera
    uv, _, in_front = cam.project_points(points)
    safe = np.where(in_front[:, None], uv, -1.0)
    col = np.floor(safe[:, 0]).astype(np.int64)
    row = np.floor(safe[:, 1]).astype(np.int64)
    inside = in_front & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    return uv, np.stack([row, col], axis=1), inside


def visible_in_view(mesh: TriangleMesh, gbuf: GBuffer, points: np.ndarray, tri_ids: np.ndarray,
                    depth_tol: float = DEFAULT_DEPTH_TOL) -> np.ndarray:
    """Boolean per point: is the point (lying on triangle tri_ids[i]) seen by gbuf's camera."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri_ids = np.asarray(tri_ids, dtype=np.int64).reshape(-1)
    _, pix, inside = project_into(gbuf, points)
    visible = np.zeros(len(points), dtype=bool)
    candidates = np.flatnonzero(inside)
    if candidates.size == 0:
        return visible

    origin = gbuf.camera.center
    h, w = gbuf.shape
    limit = 1.0 - depth_tol
    for start in range(0, candidates.size, _CHUNK):
        idx = candidates[start:start + _CHUNK]
        occluded = np.zeros(idx.size, dtype=bool)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r = np.clip(pix[idx, 0] + dr, 0, h - 1)
                c = np.clip(pix[idx, 1] + dc, 0, w - 1)
                other = gbuf.tri_id[r, c]
                test = (other >= 0) & (other != tri_ids[idx]) & ~occluded
                if not test.any():
                    continue
                sel = np.flatnonzero(test)
                t = _ray_hits(origin, points[idx[sel]], mesh.corners[other[sel]])
                occluded[sel] |= t < limit
        visible[idx] = ~occluded
    return visible
