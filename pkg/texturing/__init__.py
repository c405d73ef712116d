"""
Texturing module for scenekit: view propagation, external generators and
UV-atlas baking.
"""

from .propagation import (KnownView, KnownViewSet, PropagationPacket, masked_blend, project_known,
                          propagation_loop, visibility_mask)
from .generators import CommandGenerator, CommandHook, ExternalGenerator, OracleGenerator, generator_retry
from .baking import BakeConfig, TexelAtlas, bake, dilate_atlas, prepare_uvs, view_confidence
from .uv_atlas import auto_atlas, rasterize_uv

__all__ = [
    'KnownView', 'KnownViewSet', 'PropagationPacket', 'masked_blend', 'project_known',
    'propagation_loop', 'visibility_mask',
    'CommandGenerator', 'CommandHook', 'ExternalGenerator', 'OracleGenerator', 'generator_retry',
    'BakeConfig', 'TexelAtlas', 'bake', 'dilate_atlas', 'prepare_uvs', 'view_confidence',
    'auto_atlas', 'rasterize_uv',
]
