"""
Background reconstruction from planes: sequential RANSAC extraction with a
least-squares refit, and grid meshing of each plane's inliers.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from geometry.core import PointCloud, TriangleMesh
from geometry.errors import DegeneratePlane, EmptyInput, InvalidInput

DEFAULT_MAX_PLANES = 6
DEFAULT_INLIER_TOL = 0.01
DEFAULT_MIN_INLIER_RATIO = 0.05
DEFAULT_ITERATIONS = 1000
DEFAULT_RESOLUTION = 64

# distance evaluations per RANSAC chunk (points x hypotheses)
_CHUNK_BUDGET = 4_000_000


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane n.x = d with unit normal; `inliers` index the cloud it was fitted on."""
    normal: np.ndarray
    offset: float
    inliers: np.ndarray

    def __post_init__(self):
        normal = np.array(self.normal, dtype=np.float64).reshape(3)
        length = np.linalg.norm(normal)
        if not length > 0:
            raise DegeneratePlane("plane normal has zero length")
        normal = normal / length
        normal.setflags(write=False)
        inliers = np.array(self.inliers, dtype=np.int64).reshape(-1)
        inliers.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "inliers", inliers)

    def residuals(self, points: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal - self.offset)

    def to_dict(self):
        return {"normal": self.normal.tolist(), "offset": self.offset, "inliers": int(len(self.inliers))}


def _canonical(normal: np.ndarray, offset: float) -> Tuple[np.ndarray, float]:
    """Sign convention: the largest-magnitude normal component is positive."""
    if normal[np.argmax(np.abs(normal))] < 0:
        return -normal, -offset
    return normal, offset


def _refit(points: np.ndarray) -> Tuple[np.ndarray, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    return _canonical(normal, float(normal @ centroid))


def _best_hypothesis(points: np.ndarray, tol: float, iterations: int,
                     rng: np.random.Generator) -> Optional[Tuple[np.ndarray, float]]:
    m = len(points)
    samples = np.stack([rng.choice(m, size=3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = points[samples[:, 0]], points[samples[:, 1]], points[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    lengths = np.linalg.norm(normals, axis=1)
    ok = lengths > 1e-12
    if not ok.any():
        return None
    normals = normals[ok] / lengths[ok, None]
    offsets = np.einsum("ij,ij->i", normals, p0[ok])

    counts = np.empty(len(normals), dtype=np.int64)
    chunk = max(1, _CHUNK_BUDGET // max(m, 1))
    for start in range(0, len(normals), chunk):
        stop = start + chunk
        dist = np.abs(points @ normals[start:stop].T - offsets[start:stop])
        counts[start:stop] = (dist <= tol).sum(axis=0)
    best = int(np.argmax(counts))
    return normals[best], float(offsets[best])


def fit_planes(cloud: PointCloud, max_planes: int = DEFAULT_MAX_PLANES,
               inlier_tol: float = DEFAULT_INLIER_TOL, min_inliers: Optional[int] = None,
               seed: int = 0, iterations: int = DEFAULT_ITERATIONS,
               logger: Optional[logging.Logger] = None) -> List[Plane]:
    """
    Sequential RANSAC: take the plane with most inliers, refit it by least
    squares, remove its inliers and repeat. Stops at `max_planes` or when the
    best plane has fewer than `min_inliers` (default 5% of the cloud) points.
    """
    logger = logger or logging.getLogger(__name__)
    if cloud.is_empty:
        raise EmptyInput("fit_planes on an empty cloud")
    if inlier_tol <= 0 or max_planes < 0 or iterations < 1:
        raise InvalidInput("invalid plane fitting parameters")
    points = cloud.points
    if min_inliers is None:
        min_inliers = int(np.ceil(DEFAULT_MIN_INLIER_RATIO * len(points)))
    min_inliers = max(int(min_inliers), 3)

    rng = np.random.default_rng(seed)
    remaining = np.arange(len(points))
    planes: List[Plane] = []
    while len(planes) < max_planes and len(remaining) >= min_inliers:
        pts = points[remaining]
        hypothesis = _best_hypothesis(pts, inlier_tol, iterations, rng)
        if hypothesis is None:
            break
        normal, offset = hypothesis
        mask = np.abs(pts @ normal - offset) <= inlier_tol
        if mask.sum() < 3:
            break
        # two refits settle the inlier set on the least-squares plane
        for _ in range(2):
            normal, offset = _refit(pts[mask])
            refined = np.abs(pts @ normal - offset) <= inlier_tol
            if refined.sum() < 3:
                break
            mask = refined
        if mask.sum() < min_inliers:
            break
        plane = Plane(normal=normal, offset=offset, inliers=remaining[mask])
        planes.append(plane)
        logger.info(f"[background] plane {len(planes)}: normal={np.round(plane.normal, 4).tolist()} "
                    f"d={plane.offset:.4f} inliers={len(plane.inliers)}")
        remaining = remaining[~mask]
    return planes


def plane_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane, forming a right-handed frame with the normal."""
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def project_to_plane(plane: Plane, cloud: PointCloud) -> PointCloud:
    """Planar smoothing: move every point onto the plane along its normal."""
    points = cloud.points - np.outer(cloud.points @ plane.normal - plane.offset, plane.normal)
    return cloud.with_points(points)


def plane_to_mesh(plane: Plane, inliers: PointCloud, resolution: int = DEFAULT_RESOLUTION) -> TriangleMesh:
    """
    Regular resolution x resolution grid over the inliers' bounding rectangle in
    plane coordinates; vertex colors come from the nearest projected inlier.
    """
    if len(inliers) < 3:
        raise DegeneratePlane(f"plane meshing needs at least 3 inliers, got {len(inliers)}")
    if resolution < 2:
        raise InvalidInput(f"grid resolution must be >= 2, got {resolution}")
    u, v = plane_basis(plane.normal)
    coords = np.stack([inliers.points @ u, inliers.points @ v], axis=1)
    centered = coords - coords.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0 or sv[-1] <= 1e-9 * sv[0]:
        raise DegeneratePlane("plane inliers are collinear")

    lo, hi = coords.min(axis=0), coords.max(axis=0)
    a = np.linspace(lo[0], hi[0], resolution)
    b = np.linspace(lo[1], hi[1], resolution)
    ga, gb = np.meshgrid(a, b)
    grid = np.stack([ga.ravel(), gb.ravel()], axis=1)
    vertices = plane.offset * plane.normal + grid[:, :1] * u + grid[:, 1:] * v

    r = resolution
    i, j = np.meshgrid(np.arange(r - 1), np.arange(r - 1), indexing="ij")
    v00 = (i * r + j).ravel()
    v01, v10, v11 = v00 + 1, v00 + r, v00 + r + 1
    triangles = np.concatenate([np.stack([v00, v01, v11], axis=1),
                                np.stack([v00, v11, v10], axis=1)])

    colors = None
    if inliers.colors is not None:
        _, nearest = cKDTree(coords).query(grid)
        colors = inliers.colors[nearest]
    return TriangleMesh(vertices=vertices, triangles=triangles, vertex_colors=colors)
