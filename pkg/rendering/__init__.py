"""
Rendering module for scenekit: rasterized G-buffers, conditioning maps,
camera rigs, visibility and textured rendering.
"""

from .rasterizer import GBuffer, rasterize
from .conditioning import ConditionTensor, edge_map, pack_condition
from .rig import RigConfig, RigView, ViewRig, default_rig, rig_for_mesh
from .visibility import DEFAULT_DEPTH_TOL, visible_in_view
from .textured import render_textured, sample_bilinear, sample_texture

__all__ = [
    'GBuffer', 'rasterize',
    'ConditionTensor', 'edge_map', 'pack_condition',
    'RigConfig', 'RigView', 'ViewRig', 'default_rig', 'rig_for_mesh',
    'DEFAULT_DEPTH_TOL', 'visible_in_view',
    'render_textured', 'sample_bilinear', 'sample_texture',
]
