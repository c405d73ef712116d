"""
Z-buffered software rasterizer producing per-view G-buffers.

Triangles are scan-converted one at a time in ascending id order over their
pixel bounding box; coverage is tested at pixel centers. Depth is compared
with a strict less-than, so at equal depth the lower triangle id keeps the
pixel. Barycentrics are perspective-correct.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from geometry.core import PinholeCamera, TriangleMesh
from geometry.errors import EmptyInput

# relative slack on the edge functions so shared edges leave no cracks
_EDGE_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class GBuffer:
    """
    depth: camera-frame Z (0 where empty); tri_id: owning triangle (-1 where
    empty); bary: perspective-correct barycentrics; normal, position: world space.
    """
    camera: PinholeCamera
    depth: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray
    normal: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        for name in ("depth", "tri_id", "bary", "normal", "position"):
            getattr(self, name).setflags(write=False)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.depth.shape

    @property
    def coverage(self) -> np.ndarray:
        return self.tri_id >= 0

    @classmethod
    def empty(cls, cam: PinholeCamera) -> "GBuffer":
        h, w = cam.height, cam.width
        return cls(camera=cam, depth=np.zeros((h, w)), tri_id=np.full((h, w), -1, dtype=np.int64),
                   bary=np.zeros((h, w, 3)), normal=np.zeros((h, w, 3)), position=np.zeros((h, w, 3)))


def rasterize(mesh: TriangleMesh, cam: PinholeCamera, smooth_normals: bool = False) -> GBuffer:
    """
    Render depth, triangle ids, barycentrics, normals and positions.
    Triangles with any vertex at or behind the near plane are skipped.
    """
    if not len(mesh):
        raise EmptyInput("cannot rasterize an empty mesh")
    h, w = cam.height, cam.width
    zbuf = np.full((h, w), np.inf)
    ids = np.full((h, w), -1, dtype=np.int64)
    bary = np.zeros((h, w, 3))

    uv, z, in_front = cam.project_points(mesh.vertices)
    tri_uv = uv[mesh.triangles]
    tri_z = z[mesh.triangles]
    tri_ok = in_front[mesh.triangles].all(axis=1)

    for t in np.flatnonzero(tri_ok):
        (x0, y0), (x1, y1), (x2, y2) = tri_uv[t]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-14:
            continue
        c_lo = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        c_hi = min(int(np.ceil(max(x0, x1, x2) - 0.5)), w - 1)
        r_lo = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        r_hi = min(int(np.ceil(max(y0, y1, y2) - 0.5)), h - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue

        px, py = np.meshgrid(np.arange(c_lo, c_hi + 1) + 0.5, np.arange(r_lo, r_hi + 1) + 0.5)
        l0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        l1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        l2 = 1.0 - l0 - l1
        inside = (l0 >= -_EDGE_EPS) & (l1 >= -_EDGE_EPS) & (l2 >= -_EDGE_EPS)
        if not inside.any():
            continue

        za, zb, zc = tri_z[t]
        w0, w1, w2 = l0 / za, l1 / zb, l2 / zc
        inv_z = w0 + w1 + w2
        depth = 1.0 / inv_z

        rows = slice(r_lo, r_hi + 1)
        cols = slice(c_lo, c_hi + 1)
        win = inside & (depth < zbuf[rows, cols])
        if not win.any():
            continue
        zbuf[rows, cols][win] = depth[win]
        ids[rows, cols][win] = t
        persp = np.stack([w0, w1, w2], axis=-1) / inv_z[..., None]
        bary[rows, cols][win] = persp[win]

    covered = ids >= 0
    depth_img = np.where(covered, zbuf, 0.0)
    position = np.zeros((h, w, 3))
    normal = np.zeros((h, w, 3))
    if covered.any():
        tid = ids[covered]
        b = bary[covered]
        position[covered] = np.einsum("nk,nkj->nj", b, mesh.corners[tid])
        if smooth_normals:
            n = np.einsum("nk,nkj->nj", b, mesh.vertex_normals[mesh.triangles[tid]])
            lengths = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.where(lengths > 1e-12, n / np.where(lengths > 1e-12, lengths, 1.0), mesh.face_normals[tid])
        else:
            n = mesh.face_normals[tid]
        normal[covered] = n
    return GBuffer(camera=cam, depth=depth_img, tri_id=ids, bary=bary * covered[..., None],
                   normal=normal, position=position)
