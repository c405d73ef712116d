"""
Back-projection of multi-view images into a UV texture atlas.

Every view gets a confidence map: prior weight times |cos| of the angle
between surface normal and viewing direction, zero beyond the angular
threshold, on edge pixels and off the surface. Baking is texel-centric: each
texel finds its triangle in UV space, recovers its 3D point, and gathers
confidence-weighted colors from the views that see it. The final color is the
accumulated color divided by the accumulated confidence.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage

from geometry.core import PinholeCamera, TriangleMesh
from geometry.errors import InvalidInput, MissingUVs, ShapeError
from rendering.rasterizer import GBuffer
from rendering.textured import sample_bilinear
from rendering.visibility import DEFAULT_DEPTH_TOL, project_into, visible_in_view

from .uv_atlas import auto_atlas, rasterize_uv

DEFAULT_ALPHA_DEG = 60.0
DEFAULT_ATLAS_RES = 2048
DEFAULT_DILATE_RADIUS = 4


@dataclass(frozen=True)
class BakeConfig:
    atlas_res: int = DEFAULT_ATLAS_RES
    alpha_deg: float = DEFAULT_ALPHA_DEG
    dilate_radius: int = DEFAULT_DILATE_RADIUS
    cosine_weighting: bool = True
    depth_tol: float = DEFAULT_DEPTH_TOL
    edge_threshold: float = 0.05
    auto_uv: bool = False

    def __post_init__(self):
        if self.atlas_res < 1:
            raise InvalidInput(f"atlas_res must be >= 1, got {self.atlas_res}")
        if not 0 < self.alpha_deg <= 90:
            raise InvalidInput(f"alpha_deg must be in (0, 90], got {self.alpha_deg}")
        if self.dilate_radius < 0 or self.depth_tol < 0 or self.edge_threshold < 0:
            raise InvalidInput("dilate_radius, depth_tol and edge_threshold must be non-negative")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "BakeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"Unknown bake config keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def confidence_weight(normals: np.ndarray, to_camera: np.ndarray, weight: float,
                      alpha_deg: float = DEFAULT_ALPHA_DEG, cosine_weighting: bool = True) -> np.ndarray:
    """weight * |cos theta| (or weight alone) where theta <= alpha, else 0."""
    lengths = np.linalg.norm(to_camera, axis=-1)
    safe = np.where(lengths > 0, lengths, 1.0)
    cos = np.abs(np.einsum("...i,...i->...", normals, to_camera)) / safe
    keep = (lengths > 0) & (cos >= math.cos(math.radians(alpha_deg)) - 1e-12)
    value = weight * cos if cosine_weighting else np.full(cos.shape, float(weight))
    return np.where(keep, value, 0.0)


def view_confidence(gbuf: GBuffer, cam: PinholeCamera, edges: np.ndarray, weight: float,
                    alpha_deg: float = DEFAULT_ALPHA_DEG, cosine_weighting: bool = True) -> np.ndarray:
    edges = np.asarray(edges, dtype=bool)
    if edges.shape != gbuf.shape:
        raise ShapeError(f"edge map {edges.shape} does not match G-buffer {gbuf.shape}")
    conf = np.zeros(gbuf.shape)
    use = gbuf.coverage & ~edges
    if use.any():
        conf[use] = confidence_weight(gbuf.normal[use], cam.center - gbuf.position[use],
                                      weight, alpha_deg, cosine_weighting)
    return conf


@dataclass(frozen=True, eq=False)
class TexelAtlas:
    """Accumulated weighted color and confidence per texel; valid where confidence > 0."""
    color_sum: np.ndarray
    confidence: np.ndarray
    dilated: Optional[np.ndarray] = None

    def __post_init__(self):
        res = self.confidence.shape
        if self.color_sum.shape != res + (3,):
            raise ShapeError("color_sum and confidence shapes disagree")
        if self.dilated is None:
            object.__setattr__(self, "dilated", np.zeros(res, dtype=bool))
        for arr in (self.color_sum, self.confidence, self.dilated):
            arr.setflags(write=False)

    @property
    def resolution(self) -> int:
        return self.confidence.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.confidence > 0

    @property
    def color(self) -> np.ndarray:
        """Normalized color, zero on invalid texels."""
        valid = self.valid
        out = np.zeros(self.color_sum.shape)
        out[valid] = self.color_sum[valid] / self.confidence[valid][:, None]
        return out

    def stats(self) -> Dict[str, Any]:
        total = self.confidence.size
        return {"resolution": self.resolution, "valid_texels": int(self.valid.sum()),
                "dilated_texels": int(self.dilated.sum()),
                "coverage": float(self.valid.sum()) / total}


def prepare_uvs(mesh: TriangleMesh, atlas_res: int, auto_uv: bool = False,
                logger: Optional[logging.Logger] = None) -> TriangleMesh:
    if mesh.has_uvs:
        return mesh
    if not auto_uv:
        raise MissingUVs("mesh has no UV coordinates (enable auto_uv for a fallback atlas)")
    (logger or logging.getLogger(__name__)).warning(
        f"[bake] mesh has no UVs; packing {len(mesh)} per-triangle charts")
    return auto_atlas(mesh, atlas_res)


def bake(mesh: TriangleMesh, views: Sequence, confs: Sequence[np.ndarray],
         atlas_res: int = DEFAULT_ATLAS_RES, depth_tol: float = DEFAULT_DEPTH_TOL,
         logger: Optional[logging.Logger] = None) -> TexelAtlas:
    """
    Gather colors into the atlas. `views` are known views (camera, image,
    G-buffer); `confs` hold one confidence map per view.
    """
    logger = logger or logging.getLogger(__name__)
    if not mesh.has_uvs:
        raise MissingUVs("bake needs a mesh with UV coordinates")
    if len(confs) != len(views):
        raise ShapeError(f"{len(views)} views but {len(confs)} confidence maps")

    ids, bary = rasterize_uv(mesh, atlas_res)
    owned = ids >= 0
    tri = ids[owned]
    points = np.einsum("nk,nkj->nj", bary[owned], mesh.corners[tri])

    color_sum = np.zeros((len(tri), 3))
    conf_sum = np.zeros(len(tri))
    for j, (view, conf) in enumerate(zip(views, confs)):
        conf = np.asarray(conf, dtype=np.float64)
        if conf.shape != view.gbuf.shape or view.image.shape[:2] != view.gbuf.shape:
            raise ShapeError(f"view {j}: image, confidence and G-buffer sizes disagree")
        seen = visible_in_view(mesh, view.gbuf, points, tri, depth_tol)
        uv, pix, _ = project_into(view.gbuf, points)
        sel = np.flatnonzero(seen)
        c = conf[pix[sel, 0], pix[sel, 1]]
        sel, c = sel[c > 0], c[c > 0]
        if sel.size:
            colors = sample_bilinear(view.image, uv[sel], valid=view.gbuf.coverage)
            color_sum[sel] += c[:, None] * colors
            conf_sum[sel] += c
        logger.info(f"[bake] view {j + 1}/{len(views)}: {sel.size} texels")

    full_color = np.zeros((atlas_res, atlas_res, 3))
    full_conf = np.zeros((atlas_res, atlas_res))
    full_color[owned] = color_sum
    full_conf[owned] = conf_sum
    atlas = TexelAtlas(color_sum=full_color, confidence=full_conf)
    logger.info(f"[bake] {int(atlas.valid.sum())}/{int(owned.sum())} owned texels received color")
    return atlas


def dilate_atlas(atlas: TexelAtlas, radius: int = DEFAULT_DILATE_RADIUS) -> TexelAtlas:
    """Invalid texels within `radius` (chessboard) of a valid texel copy the nearest valid texel."""
    valid = atlas.valid
    if radius <= 0 or valid.all() or not valid.any():
        return atlas
    dist, (near_r, near_c) = ndimage.distance_transform_cdt(~valid, metric="chessboard",
                                                            return_indices=True)
    fill = ~valid & (dist <= radius)
    color_sum = np.array(atlas.color_sum)
    confidence = np.array(atlas.confidence)
    color_sum[fill] = atlas.color_sum[near_r[fill], near_c[fill]]
    confidence[fill] = atlas.confidence[near_r[fill], near_c[fill]]
    return TexelAtlas(color_sum=color_sum, confidence=confidence, dilated=atlas.dilated | fill)
