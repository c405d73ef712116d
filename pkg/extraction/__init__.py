"""
Extraction module for scenekit: pointmaps, instance segmentation, cloud cleanup
and plane-based background reconstruction.
"""

from .pointmap import DepthMap, InstanceMask, depth_to_pointmap, mask_out_foreground, segment_instance
from .cleanup import estimate_normals, remove_outliers
from .planes import Plane, fit_planes, plane_to_mesh, project_to_plane

__all__ = [
    'DepthMap', 'InstanceMask', 'depth_to_pointmap', 'mask_out_foreground', 'segment_instance',
    'estimate_normals', 'remove_outliers',
    'Plane', 'fit_planes', 'plane_to_mesh', 'project_to_plane',
]
