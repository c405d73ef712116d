"""
UV-space helpers: texel ownership by rasterizing triangles in UV space, and a
fallback atlas that gives every triangle its own chart on a uniform grid.
"""

import math
from typing import Tuple

import numpy as np

from geometry.core import TriangleMesh
from geometry.errors import EmptyInput, InvalidInput, MissingUVs

DEFAULT_GUTTER = 2


def texel_centers(res: int) -> np.ndarray:
    """(res, res, 2) normalized UV of every texel center, top-left origin."""
    coords = (np.arange(res) + 0.5) / res
    u, v = np.meshgrid(coords, coords)
    return np.stack([u, v], axis=-1)


def rasterize_uv(mesh: TriangleMesh, res: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Owning triangle (-1 where none) and barycentrics of every texel center.
    Where charts overlap the lower triangle id wins.
    """
    if not mesh.has_uvs:
        raise MissingUVs("mesh has no UV coordinates")
    ids = np.full((res, res), -1, dtype=np.int64)
    bary = np.zeros((res, res, 3))
    tri_uv = mesh.uvs * res
    for t in range(len(mesh)):
        (x0, y0), (x1, y1), (x2, y2) = tri_uv[t]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-14:
            continue
        c_lo = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        c_hi = min(int(np.ceil(max(x0, x1, x2) - 0.5)), res - 1)
        r_lo = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        r_hi = min(int(np.ceil(max(y0, y1, y2) - 0.5)), res - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue
        px, py = np.meshgrid(np.arange(c_lo, c_hi + 1) + 0.5, np.arange(r_lo, r_hi + 1) + 0.5)
        l0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        l1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        l2 = 1.0 - l0 - l1
        rows = slice(r_lo, r_hi + 1)
        cols = slice(c_lo, c_hi + 1)
        win = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9) & (ids[rows, cols] < 0)
        if not win.any():
            continue
        ids[rows, cols][win] = t
        bary[rows, cols][win] = np.stack([l0, l1, l2], axis=-1)[win]
    return ids, bary


def auto_atlas(mesh: TriangleMesh, res: int, gutter: int = DEFAULT_GUTTER) -> TriangleMesh:
    """
    Per-triangle charts on a ceil(sqrt(F)) square grid, each triangle mapped to
    the right-angled half of its cell inset by `gutter` texels.
    """
    faces = len(mesh)
    if not faces:
        raise EmptyInput("cannot build an atlas for an empty mesh")
    n = math.ceil(math.sqrt(faces))
    cell = res / n
    if cell < 2 * gutter + 3:
        raise InvalidInput(f"atlas {res}x{res} is too small for {faces} triangle charts")
    k = np.arange(faces)
    x0 = (k % n) * cell + gutter
    y0 = (k // n) * cell + gutter
    x1 = (k % n + 1) * cell - gutter
    y1 = (k // n + 1) * cell - gutter
    uvs = np.stack([np.stack([x0, y0], axis=1),
                    np.stack([x1, y0], axis=1),
                    np.stack([x0, y1], axis=1)], axis=1) / res
    return mesh.with_uvs(uvs)
