"""Point-cloud denoising and normal estimation over k-nearest neighborhoods."""

import logging
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from geometry.core import PointCloud
from geometry.errors import DegenerateCloud, InvalidInput

DEFAULT_K = 16
DEFAULT_STD_RATIO = 2.0


def remove_outliers(cloud: PointCloud, k: int = DEFAULT_K, std_ratio: float = DEFAULT_STD_RATIO,
                    logger: Optional[logging.Logger] = None) -> PointCloud:
    """
    Statistical outlier removal: drop points whose mean distance to their k
    nearest neighbors exceeds the global mean by more than std_ratio standard
    deviations. Clouds with k or fewer points pass through unchanged.
    """
    logger = logger or logging.getLogger(__name__)
    if k < 1 or std_ratio < 0:
        raise InvalidInput(f"invalid outlier parameters k={k}, std_ratio={std_ratio}")
    if len(cloud) <= k:
        logger.warning(f"[extract] outlier removal skipped: {len(cloud)} points, k={k}")
        return cloud

    dist, _ = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    mean_dist = dist[:, 1:].mean(axis=1)
    mu = mean_dist.mean()
    threshold = mu + std_ratio * mean_dist.std()
    # relative slack keeps symmetric neighborhoods with equal distances together
    keep = mean_dist <= threshold + 1e-9 * max(mu, 1e-300)
    removed = int((~keep).sum())
    if removed:
        logger.info(f"[extract] removed {removed}/{len(cloud)} outliers")
    return cloud.subset(keep)


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_K,
                     camera_center: Optional[np.ndarray] = None,
                     logger: Optional[logging.Logger] = None) -> PointCloud:
    """
    Per-point normal from the smallest-eigenvalue eigenvector of the k-NN
    covariance, oriented toward `camera_center` (world origin by default).
    Neighborhoods without a well-defined plane are flagged in `normal_valid`.
    """
    logger = logger or logging.getLogger(__name__)
    n = len(cloud)
    if n < 3:
        raise DegenerateCloud(f"normal estimation needs at least 3 points, got {n}")
    if k >= n:
        logger.warning(f"[extract] k={k} >= cloud size {n}; using k={n - 1}")
        k = n - 1
    k = max(k, 2)
    center = np.zeros(3) if camera_center is None else np.asarray(camera_center, dtype=np.float64)

    _, idx = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    nbrs = cloud.points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]

    # a plane needs two clearly non-zero spreads
    scale = eigvals[:, 2]
    valid = (scale > 0) & (eigvals[:, 1] > 1e-10 * scale)

    to_cam = center - cloud.points
    flip = np.einsum("ij,ij->i", normals, to_cam) < 0
    normals[flip] *= -1.0

    if not valid.all():
        logger.warning(f"[extract] {int((~valid).sum())} points have degenerate neighborhoods")
        fallback = to_cam[~valid]
        lengths = np.linalg.norm(fallback, axis=1, keepdims=True)
        fallback = np.where(lengths > 0, fallback / np.where(lengths > 0, lengths, 1.0), [0.0, 0.0, 1.0])
        normals[~valid] = fallback
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals, valid)
