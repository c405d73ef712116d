"""
Camera rigs: the default ten-view layout of six axis-aligned principal views
and four oblique views, all looking at the mesh centroid. World +Y is up.
"""

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from geometry.core import PinholeCamera, TriangleMesh
from geometry.errors import InvalidInput

PRINCIPAL_WEIGHT = 1.0
OBLIQUE_WEIGHT = 0.1
# (name, azimuth deg, elevation deg)
PRINCIPAL_VIEWS = (("front", 0.0, 0.0), ("right", 90.0, 0.0), ("back", 180.0, 0.0),
                   ("left", 270.0, 0.0), ("top", 0.0, 90.0), ("bottom", 0.0, -90.0))
OBLIQUE_AZIMUTHS = (45.0, 135.0, 225.0, 325.0)
OBLIQUE_ELEVATIONS = (-20.0, 20.0, -20.0, 20.0)


@dataclass(frozen=True)
class RigView:
    camera: PinholeCamera
    weight: float
    name: str


class ViewRig:
    """Ordered camera views with positive prior weights."""

    def __init__(self, views: Sequence[RigView]):
        if not views:
            raise InvalidInput("a view rig needs at least one view")
        for v in views:
            if not v.weight > 0:
                raise InvalidInput(f"view {v.name} has non-positive weight {v.weight}")
        self.views: List[RigView] = list(views)

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self) -> Iterator[RigView]:
        return iter(self.views)

    def __getitem__(self, i: int) -> RigView:
        return self.views[i]

    def to_dict(self) -> Dict[str, Any]:
        return {"views": [{"name": v.name, "weight": v.weight, "camera": v.camera.to_dict()}
                          for v in self.views]}


@dataclass(frozen=True)
class RigConfig:
    radius: Optional[float] = None
    resolution: int = 768
    fov_deg: float = 45.0
    oblique_azimuths: Tuple[float, ...] = OBLIQUE_AZIMUTHS
    oblique_elevations: Tuple[float, ...] = OBLIQUE_ELEVATIONS
    principal_weight: float = PRINCIPAL_WEIGHT
    oblique_weight: float = OBLIQUE_WEIGHT
    smooth_normals: bool = False

    def __post_init__(self):
        object.__setattr__(self, "oblique_azimuths", tuple(float(a) for a in self.oblique_azimuths))
        object.__setattr__(self, "oblique_elevations", tuple(float(e) for e in self.oblique_elevations))
        if self.radius is not None and not self.radius > 0:
            raise InvalidInput(f"rig radius must be positive, got {self.radius}")
        if self.resolution < 1 or not 0 < self.fov_deg < 180:
            raise InvalidInput("invalid rig resolution or field of view")
        if len(self.oblique_azimuths) != len(self.oblique_elevations):
            raise InvalidInput("oblique azimuths and elevations must pair up")
        if not (self.principal_weight > 0 and self.oblique_weight > 0):
            raise InvalidInput("view weights must be positive")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RigConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInput(f"Unknown rig config keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["oblique_azimuths"] = list(self.oblique_azimuths)
        out["oblique_elevations"] = list(self.oblique_elevations)
        return out


def orbit_position(center: np.ndarray, radius: float, azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    offset = np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    return np.asarray(center, dtype=np.float64) + radius * offset


def _orbit_camera(center: np.ndarray, radius: float, azimuth: float, elevation: float,
                  resolution: int, fov_deg: float) -> PinholeCamera:
    eye = orbit_position(center, radius, azimuth, elevation)
    if abs(elevation) >= 90.0 - 1e-9:
        # straight down or up: image up follows world -Z / +Z
        up = np.array([0.0, 0.0, -1.0]) if elevation > 0 else np.array([0.0, 0.0, 1.0])
    else:
        up = np.array([0.0, 1.0, 0.0])
    base = PinholeCamera.from_fov(fov_deg, resolution, resolution)
    return PinholeCamera.look_at(eye, center, up, base.fx, base.fy, base.cx, base.cy,
                                 resolution, resolution)


def default_rig(radius: float, center: Optional[np.ndarray] = None,
                cfg: Optional[RigConfig] = None) -> ViewRig:
    """Six principal views (weight 1.0) followed by the oblique views (weight 0.1)."""
    if not radius > 0:
        raise InvalidInput(f"rig radius must be positive, got {radius}")
    cfg = cfg or RigConfig()
    center = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
    views = [RigView(camera=_orbit_camera(center, radius, az, el, cfg.resolution, cfg.fov_deg),
                     weight=cfg.principal_weight, name=name)
             for name, az, el in PRINCIPAL_VIEWS]
    for az, el in zip(cfg.oblique_azimuths, cfg.oblique_elevations):
        views.append(RigView(camera=_orbit_camera(center, radius, az, el, cfg.resolution, cfg.fov_deg),
                             weight=cfg.oblique_weight, name=f"oblique_az{az:g}_el{el:g}"))
    return ViewRig(views)


def framing_radius(mesh: TriangleMesh, fov_deg: float, margin: float = 1.1) -> float:
    """Distance at which the mesh's bounding sphere around its centroid fits the field of view."""
    center = mesh.centroid()
    sphere = float(np.max(np.linalg.norm(mesh.vertices - center, axis=1)))
    if sphere <= 0:
        raise InvalidInput("mesh has zero extent")
    return margin * sphere / math.sin(math.radians(fov_deg) / 2.0)


def rig_for_mesh(mesh: TriangleMesh, cfg: Optional[RigConfig] = None) -> ViewRig:
    cfg = cfg or RigConfig()
    radius = cfg.radius if cfg.radius is not None else framing_radius(mesh, cfg.fov_deg)
    return default_rig(radius, center=mesh.centroid(), cfg=cfg)
