"""
Exact nearest-neighbor index, symmetric Chamfer distances in 3D and in
projected pixel space, and analytic pose gradients of the weighted layout loss.

Chamfer distance here is squared and mean-reduced in both directions:
    CD(A, B) = mean_a min_b |a - b|^2 + mean_b min_a |a - b|^2
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import PinholeCamera, PointCloud, PoseParams, rotation_jacobian
from .errors import AllPointsCulled, EmptyInput, InvalidInput


class NNIndex:
    """
    Exact nearest-neighbor index over a fixed 2D or 3D point set.
    Ties resolve to the lowest point index.
    """

    def __init__(self, points: np.ndarray):
        pts = np.array(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise InvalidInput(f"NNIndex needs (N, 2) or (N, 3) points, got {pts.shape}")
        if len(pts) == 0:
            raise EmptyInput("NNIndex over an empty point set")
        pts.setflags(write=False)
        self.points = pts
        self.dim = pts.shape[1]
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def _sqdist(self, queries: np.ndarray, idx: np.ndarray) -> np.ndarray:
        diff = queries - self.points[idx]
        return np.einsum("ij,ij->i", diff, diff)

    def query(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest point index and squared distance for each query row."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, self.dim)
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        if len(self.points) == 1:
            idx = np.zeros(len(q), dtype=np.int64)
            return idx, self._sqdist(q, idx)

        _, cand = self._tree.query(q, k=2)
        c0 = cand[:, 0].astype(np.int64)
        c1 = cand[:, 1].astype(np.int64)
        d0 = self._sqdist(q, c0)
        d1 = self._sqdist(q, c1)

        idx = np.where((d1 < d0) | ((d1 == d0) & (c1 < c0)), c1, c0)
        best = np.minimum(d0, d1)

        # equidistant candidates beyond the first two are rare; resolve them exactly
        for row in np.flatnonzero(d0 == d1):
            radius = np.sqrt(best[row]) * (1.0 + 1e-9) + 1e-300
            near = np.asarray(self._tree.query_ball_point(q[row], radius), dtype=np.int64)
            if near.size == 0:
                continue
            dist = self._sqdist(np.broadcast_to(q[row], (near.size, self.dim)), near)
            winners = near[dist == dist.min()]
            idx[row] = winners.min()
            best[row] = dist.min()
        return idx, best


def nn_query(index: NNIndex, q: np.ndarray) -> Tuple[int, float]:
    idx, sq = index.query(np.asarray(q, dtype=np.float64).reshape(1, -1))
    return int(idx[0]), float(sq[0])


def _require(cloud: PointCloud, name: str) -> None:
    if cloud.is_empty:
        raise EmptyInput(f"{name} cloud is empty")


def _symmetric(a: np.ndarray, b: np.ndarray, b_index: Optional[NNIndex] = None) -> float:
    b_index = b_index or NNIndex(b)
    _, d_ab = b_index.query(a)
    _, d_ba = NNIndex(a).query(b)
    return float(d_ab.mean() + d_ba.mean())


def chamfer3d(A: PointCloud, B: PointCloud) -> float:
    _require(A, "first")
    _require(B, "second")
    return _symmetric(A.points, B.points)


def projected(cam: PinholeCamera, cloud: PointCloud, side: str = "cloud") -> np.ndarray:
    """Pixel coordinates of the points in front of the camera."""
    uv, _, visible = cam.project_points(cloud.points)
    if not visible.any():
        raise AllPointsCulled(f"every point of the {side} is behind the camera")
    return uv[visible]


def chamfer2d(cam: PinholeCamera, A: PointCloud, B: PointCloud) -> float:
    """Chamfer distance between the projections; culled points do not take part."""
    _require(A, "first")
    _require(B, "second")
    return _symmetric(projected(cam, A, "first cloud"), projected(cam, B, "second cloud"))


@dataclass(frozen=True, eq=False)
class PoseGradient:
    dT: np.ndarray
    dr: np.ndarray
    dlog_s: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dT, self.dr, [self.dlog_s]])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_vector()))


class RegistrationTarget:
    """Target cloud with its static 3D index and, lazily, its projected 2D index."""

    def __init__(self, cloud: PointCloud, cam: PinholeCamera):
        _require(cloud, "target")
        self.cloud = cloud
        self.cam = cam
        self.index3d = NNIndex(cloud.points)
        self._uv: Optional[np.ndarray] = None
        self._index2d: Optional[NNIndex] = None

    @property
    def uv(self) -> np.ndarray:
        if self._uv is None:
            self._uv = projected(self.cam, self.cloud, "target cloud")
        return self._uv

    @property
    def index2d(self) -> NNIndex:
        if self._index2d is None:
            self._index2d = NNIndex(self.uv)
        return self._index2d


def _chamfer_with_grad(moving: np.ndarray, target: np.ndarray,
                       target_index: NNIndex) -> Tuple[float, np.ndarray]:
    """Chamfer value and its gradient w.r.t. the moving points, correspondences held fixed."""
    idx_f, d_f = target_index.query(moving)
    idx_r, d_r = NNIndex(moving).query(target)
    grad = (2.0 / len(moving)) * (moving - target[idx_f])
    np.add.at(grad, idx_r, (2.0 / len(target)) * (moving[idx_r] - target))
    return float(d_f.mean() + d_r.mean()), grad


def loss_and_grad(pose: PoseParams, M: PointCloud, PC: PointCloud, cam: PinholeCamera,
                  lambda1: float, lambda2: float, use2d: bool,
                  target: Optional[RegistrationTarget] = None) -> Tuple[float, PoseGradient]:
    """
    lambda1 * CD3(apply_pose(pose, M), PC) + [use2d] lambda2 * CD2(cam, ...),
    with the gradient over (T, r, log_s). A zero weight skips its term entirely.
    """
    _require(M, "source")
    _require(PC, "target")
    target = target or RegistrationTarget(PC, cam)

    rot = pose.rotation()
    s = pose.scale
    base = M.points @ rot.T
    moved = s * base + pose.T
    grad_pts = np.zeros_like(moved)
    loss = 0.0

    if lambda1 != 0.0:
        l3, g3 = _chamfer_with_grad(moved, PC.points, target.index3d)
        loss += lambda1 * l3
        grad_pts += lambda1 * g3

    if use2d and lambda2 != 0.0:
        uv, _, visible = cam.project_points(moved)
        if not visible.any():
            raise AllPointsCulled("every point of the moving cloud is behind the camera")
        l2, g2 = _chamfer_with_grad(uv[visible], target.uv, target.index2d)
        loss += lambda2 * l2

        pc = cam.to_camera(moved[visible])
        z = pc[:, 2]
        g_cam = np.empty_like(pc)
        g_cam[:, 0] = g2[:, 0] * cam.fx / z
        g_cam[:, 1] = g2[:, 1] * cam.fy / z
        g_cam[:, 2] = -(g2[:, 0] * cam.fx * pc[:, 0] + g2[:, 1] * cam.fy * pc[:, 1]) / (z * z)
        grad_pts[visible] += lambda2 * (g_cam @ cam.camera_from_world[:3, :3])

    jac = rotation_jacobian(pose.r)
    dr = np.array([s * np.sum(grad_pts * (M.points @ jac[i].T)) for i in range(3)])
    grad = PoseGradient(dT=grad_pts.sum(axis=0), dr=dr,
                        dlog_s=float(np.sum(grad_pts * (s * base))))
    return float(loss), grad
