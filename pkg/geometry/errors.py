"""
Exception hierarchy shared by every scenekit package.
Each error carries the process exit code the CLI reports for it.
"""

from typing import Any, Dict, Optional


class SceneKitError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class InvalidInput(SceneKitError, ValueError):
    """Input files, arguments or values failed validation."""
    exit_code = 2


class EmptyInput(InvalidInput):
    pass


class EmptyInstance(InvalidInput):
    """An instance mask selected no valid points."""
    pass


class InvalidDepth(InvalidInput):
    pass


class DegenerateCloud(InvalidInput):
    pass


class DegeneratePlane(InvalidInput):
    pass


class DegenerateBounds(InvalidInput):
    pass


class DegenerateMesh(InvalidInput):
    pass


class ShapeError(InvalidInput):
    pass


class MissingUVs(InvalidInput):
    pass


class AllPointsCulled(InvalidInput):
    """Every point of one side of a 2D Chamfer term fell behind the camera."""
    pass


class GeneratorFailure(SceneKitError):
    """The external image generator failed, timed out or returned garbage."""
    exit_code = 3

    def __init__(self, message: str, view_index: Optional[int] = None):
        super().__init__(message)
        self.view_index = view_index


class NonFiniteLoss(SceneKitError):
    """Numerical abort inside the pose optimizer."""
    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
