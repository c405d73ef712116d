"""Geometric evaluation: Chamfer distance and F-score at object and scene level."""

from typing import Dict, Sequence

import numpy as np

from geometry.chamfer import NNIndex, chamfer3d
from geometry.core import PointCloud
from geometry.errors import EmptyInput, InvalidInput

DEFAULT_TAU = 0.02


def fscore(A: PointCloud, B: PointCloud, tau: float = DEFAULT_TAU) -> float:
    """
    F-score in percent. Precision is the fraction of A strictly closer than tau
    to B, recall the fraction of B closer than tau to A.
    """
    if not tau > 0:
        raise InvalidInput(f"F-score threshold must be positive, got {tau}")
    if A.is_empty or B.is_empty:
        raise EmptyInput("F-score needs non-empty clouds")
    _, d_ab = NNIndex(B.points).query(A.points)
    _, d_ba = NNIndex(A.points).query(B.points)
    precision = float(np.mean(np.sqrt(d_ab) < tau))
    recall = float(np.mean(np.sqrt(d_ba) < tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall) * 100.0


def scene_metrics(preds: Sequence[PointCloud], gts: Sequence[PointCloud],
                  tau: float = DEFAULT_TAU) -> Dict[str, float]:
    """Object-level metrics averaged over instance pairs, scene-level on the merged clouds."""
    if len(preds) != len(gts) or not preds:
        raise InvalidInput("scene metrics need matching, non-empty lists of clouds")
    cd_obj = [chamfer3d(p, g) for p, g in zip(preds, gts)]
    fs_obj = [fscore(p, g, tau) for p, g in zip(preds, gts)]
    scene_pred = PointCloud.concatenate(preds)
    scene_gt = PointCloud.concatenate(gts)
    return {
        "cd_object": float(np.mean(cd_obj)),
        "fscore_object": float(np.mean(fs_obj)),
        "cd_scene": chamfer3d(scene_pred, scene_gt),
        "fscore_scene": fscore(scene_pred, scene_gt, tau),
        "tau": tau,
        "pairs": len(preds),
    }
