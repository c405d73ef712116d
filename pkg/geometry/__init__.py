"""
Geometry module for scenekit: core types, projection and Chamfer registration terms.
"""

from .core import (CULLED, Culled, PinholeCamera, Pixel2, PointCloud, PoseParams, TriangleMesh,
                   apply_pose, project, rotation_from_axis_angle, unproject)
from .chamfer import NNIndex, PoseGradient, chamfer2d, chamfer3d, loss_and_grad, nn_query

__all__ = [
    'CULLED', 'Culled', 'PinholeCamera', 'Pixel2', 'PointCloud', 'PoseParams', 'TriangleMesh',
    'apply_pose', 'project', 'rotation_from_axis_angle', 'unproject',
    'NNIndex', 'PoseGradient', 'chamfer2d', 'chamfer3d', 'loss_and_grad', 'nn_query',
]
