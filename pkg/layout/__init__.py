"""
Layout module for scenekit: per-instance pose optimization, evaluation metrics
and scene assembly.
"""

from .optimizer import Adam, OptimConfig, OptimTrace, init_pose, optimize_pose
from .metrics import DEFAULT_TAU, fscore, scene_metrics
from .scene import SceneGraph, SceneNode, assemble_scene, merge_meshes, sample_surface

__all__ = [
    'Adam', 'OptimConfig', 'OptimTrace', 'init_pose', 'optimize_pose',
    'DEFAULT_TAU', 'fscore', 'scene_metrics',
    'SceneGraph', 'SceneNode', 'assemble_scene', 'merge_meshes', 'sample_surface',
]
