"""Bilinear image sampling and textured rendering from a G-buffer."""

from typing import Optional

import numpy as np

from geometry.core import PinholeCamera, TriangleMesh
from geometry.errors import InvalidInput

from .rasterizer import GBuffer, rasterize


def sample_bilinear(image: np.ndarray, uv: np.ndarray, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Bilinear samples at continuous pixel coordinates (pixel centers at +0.5).
    With `valid`, taps outside the mask get zero weight; a sample whose taps
    are all invalid falls back to the nearest pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    x = uv[:, 0] - 0.5
    y = uv[:, 1] - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    acc = np.zeros((len(uv),) + image.shape[2:])
    total = np.zeros(len(uv))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            r = np.clip(y0 + dy, 0, h - 1)
            c = np.clip(x0 + dx, 0, w - 1)
            weight = wx * wy
            if valid is not None:
                weight = weight * valid[r, c]
            acc += (weight.reshape((-1,) + (1,) * (image.ndim - 2))) * image[r, c]
            total += weight

    empty = total <= 0
    if empty.any():
        r = np.clip(np.floor(uv[empty, 1]).astype(np.int64), 0, h - 1)
        c = np.clip(np.floor(uv[empty, 0]).astype(np.int64), 0, w - 1)
        acc[empty] = image[r, c]
        total[empty] = 1.0
    return acc / total.reshape((-1,) + (1,) * (image.ndim - 2))


def sample_texture(texture: np.ndarray, uv01: np.ndarray) -> np.ndarray:
    """Sample a texture at normalized UVs (top-left origin)."""
    h, w = texture.shape[:2]
    uv01 = np.asarray(uv01, dtype=np.float64).reshape(-1, 2)
    return sample_bilinear(texture, uv01 * np.array([w, h]))


def surface_colors(mesh: TriangleMesh, tri_ids: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Albedo at surface points given by triangle id and barycentrics."""
    if mesh.has_uvs and mesh.texture is not None:
        uv = np.einsum("nk,nkj->nj", bary, mesh.uvs[tri_ids])
        return sample_texture(mesh.texture, uv)
    if mesh.vertex_colors is not None:
        return np.einsum("nk,nkj->nj", bary, mesh.vertex_colors[mesh.triangles[tri_ids]])
    raise InvalidInput("mesh has neither a texture nor vertex colors")


def render_textured(mesh: TriangleMesh, cam: PinholeCamera, gbuf: Optional[GBuffer] = None,
                    background: float = 0.0) -> np.ndarray:
    """Unlit albedo render, (H, W, 3) in [0, 1]."""
    gbuf = gbuf if gbuf is not None else rasterize(mesh, cam)
    image = np.full((cam.height, cam.width, 3), float(background))
    covered = gbuf.coverage
    if covered.any():
        image[covered] = np.clip(surface_colors(mesh, gbuf.tri_id[covered], gbuf.bary[covered]), 0.0, 1.0)
    return image
