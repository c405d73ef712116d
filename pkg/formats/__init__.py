"""
File formats for scenekit: images and PFM maps, PLY point clouds, camera JSON,
meshes and scenes, condition maps and baked atlases.
"""

from .images import read_image, read_mask, read_pfm, write_image, write_mask, write_pfm
from .ply import read_point_cloud, write_point_cloud
from .cameras import read_camera, write_camera
from .meshes import export_scene, load_mesh, load_mesh_npz, save_mesh, save_mesh_npz

__all__ = [
    'read_image', 'read_mask', 'read_pfm', 'write_image', 'write_mask', 'write_pfm',
    'read_point_cloud', 'write_point_cloud',
    'read_camera', 'write_camera',
    'export_scene', 'load_mesh', 'load_mesh_npz', 'save_mesh', 'save_mesh_npz',
]
