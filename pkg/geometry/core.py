"""
Foundational geometry: point clouds, triangle meshes, pinhole cameras and
pose parameters, plus projection and unprojection.

Camera frame: +Z forward, +X right, +Y down. Pixel (row, col) has its
center at continuous coordinates (u, v) = (col + 0.5, row + 0.5), origin at
the top-left image corner.

All types are immutable after construction: arrays are copied and marked
read-only, so values can be shared between workers without locking.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateMesh, EmptyInput, InvalidDepth, InvalidInput

EPS_Z = 1e-8
NORMAL_TOL = 1e-6
AREA_TOL = 1e-12
ORTHO_TOL = 1e-6

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[Sequence[float]]]


class Pixel2(NamedTuple):
    u: float
    v: float


class Culled:
    """Tagged outcome of projecting a point at or behind the camera plane."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "CULLED"

    def __bool__(self) -> bool:
        return False


CULLED = Culled()


def _readonly(array: ArrayLike, dtype, tail: Tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(array, dtype=dtype)
    if arr.size == 0 and tail:
        arr = arr.reshape((0,) + tail)
    if arr.shape[1:] != tail:
        raise InvalidInput(f"{name} must have shape (N, {', '.join(map(str, tail))}), got {arr.shape}")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


# ---------------------------
# Point clouds
# ---------------------------

@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions with optional per-point colors, normals and pixel provenance."""
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    # (row, col) of the source pixel when the cloud came from a depth map
    pixels: Optional[np.ndarray] = None
    normal_valid: Optional[np.ndarray] = None

    def __post_init__(self):
        points = _readonly(self.points, np.float64, (3,), "points")
        object.__setattr__(self, "points", points)
        n = len(points)

        if self.colors is not None:
            colors = _readonly(self.colors, np.float64, (3,), "colors")
            if len(colors) != n:
                raise InvalidInput(f"colors length {len(colors)} != points length {n}")
            if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
                raise InvalidInput("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", colors)

        if self.normals is not None:
            normals = _readonly(self.normals, np.float64, (3,), "normals")
            if len(normals) != n:
                raise InvalidInput(f"normals length {len(normals)} != points length {n}")
            if normals.size and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > NORMAL_TOL:
                raise InvalidInput("normals must have unit length")
            object.__setattr__(self, "normals", normals)

        if self.pixels is not None:
            pixels = _readonly(self.pixels, np.int64, (2,), "pixels")
            if len(pixels) != n:
                raise InvalidInput(f"pixels length {len(pixels)} != points length {n}")
            object.__setattr__(self, "pixels", pixels)

        if self.normal_valid is not None:
            if self.normals is None:
                raise InvalidInput("normal_valid given without normals")
            valid = np.array(self.normal_valid, dtype=bool).reshape(-1)
            if len(valid) != n:
                raise InvalidInput("normal_valid length mismatch")
            valid.setflags(write=False)
            object.__setattr__(self, "normal_valid", valid)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def subset(self, index) -> "PointCloud":
        """Select points by boolean mask or integer indices, keeping attributes aligned."""
        def take(arr):
            return None if arr is None else arr[index]
        return PointCloud(points=self.points[index], colors=take(self.colors),
                          normals=take(self.normals), pixels=take(self.pixels),
                          normal_valid=take(self.normal_valid))

    def with_points(self, points: ArrayLike, normals: Optional[ArrayLike] = None) -> "PointCloud":
        return PointCloud(points=points, colors=self.colors,
                          normals=normals, pixels=self.pixels,
                          normal_valid=self.normal_valid if normals is not None else None)

    def with_normals(self, normals: ArrayLike, valid: Optional[ArrayLike] = None) -> "PointCloud":
        return PointCloud(points=self.points, colors=self.colors, normals=normals,
                          pixels=self.pixels, normal_valid=valid)

    def centroid(self) -> np.ndarray:
        if self.is_empty:
            raise EmptyInput("centroid of an empty cloud")
        return self.points.mean(axis=0)

    def bbox_diagonal(self) -> float:
        if self.is_empty:
            raise EmptyInput("bounding box of an empty cloud")
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if not c.is_empty]
        if not clouds:
            return PointCloud(points=np.zeros((0, 3)))

        def merged(attr):
            values = [getattr(c, attr) for c in clouds]
            if any(v is None for v in values):
                return None
            return np.concatenate(values)

        return PointCloud(points=np.concatenate([c.points for c in clouds]),
                          colors=merged("colors"), normals=merged("normals"))


# ---------------------------
# Triangle meshes
# ---------------------------

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    Indexed triangle mesh. `uvs` are per-corner (F, 3, 2) with the origin at the
    top-left of `texture`, v growing downward.
    """
    vertices: np.ndarray
    triangles: np.ndarray
    uvs: Optional[np.ndarray] = None
    vertex_colors: Optional[np.ndarray] = None
    texture: Optional[np.ndarray] = None

    def __post_init__(self):
        vertices = _readonly(self.vertices, np.float64, (3,), "vertices")
        triangles = _readonly(self.triangles, np.int64, (3,), "triangles")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise DegenerateMesh("triangle index out of range")
        if triangles.size:
            areas = self.face_areas
            bad = np.flatnonzero(areas <= AREA_TOL)
            if bad.size:
                raise DegenerateMesh(f"{bad.size} degenerate triangles (first: {int(bad[0])})")

        if self.uvs is not None:
            uvs = np.array(self.uvs, dtype=np.float64)
            if uvs.shape != (len(triangles), 3, 2):
                raise InvalidInput(f"uvs must have shape (F, 3, 2), got {uvs.shape}")
            if not np.all(np.isfinite(uvs)):
                raise InvalidInput("uvs contain non-finite values")
            uvs.setflags(write=False)
            object.__setattr__(self, "uvs", uvs)

        if self.vertex_colors is not None:
            colors = _readonly(self.vertex_colors, np.float64, (3,), "vertex_colors")
            if len(colors) != len(vertices):
                raise InvalidInput("vertex_colors length mismatch")
            object.__setattr__(self, "vertex_colors", colors)

        if self.texture is not None:
            texture = np.array(self.texture, dtype=np.float64)
            if texture.ndim != 3 or texture.shape[2] != 3:
                raise InvalidInput(f"texture must be (H, W, 3), got {texture.shape}")
            texture.setflags(write=False)
            object.__setattr__(self, "texture", texture)

    @classmethod
    def from_arrays(cls, vertices: ArrayLike, triangles: ArrayLike, uvs=None, vertex_colors=None,
                    texture=None, drop_degenerate: bool = False,
                    logger: Optional[logging.Logger] = None) -> "TriangleMesh":
        """Build a mesh, optionally dropping zero-area triangles instead of rejecting them."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if drop_degenerate and len(triangles):
            corners = vertices[triangles]
            areas = 0.5 * np.linalg.norm(
                np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
            keep = areas > AREA_TOL
            if not np.all(keep):
                (logger or logging.getLogger(__name__)).warning(
                    f"Dropping {int((~keep).sum())} degenerate triangles")
                triangles = triangles[keep]
                if uvs is not None:
                    uvs = np.asarray(uvs)[keep]
        return cls(vertices=vertices, triangles=triangles, uvs=uvs,
                   vertex_colors=vertex_colors, texture=texture)

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def has_uvs(self) -> bool:
        return self.uvs is not None

    @cached_property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    @cached_property
    def face_areas(self) -> np.ndarray:
        c = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals; isolated vertices get +Z."""
        c = self.corners
        weighted = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], weighted)
        norms = np.linalg.norm(acc, axis=1, keepdims=True)
        out = np.where(norms > 0, acc / np.where(norms > 0, norms, 1.0), [0.0, 0.0, 1.0])
        return out

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise EmptyInput("bounds of an empty mesh")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def centroid(self) -> np.ndarray:
        """Area-weighted surface centroid."""
        if not len(self.triangles):
            raise EmptyInput("centroid of an empty mesh")
        centers = self.corners.mean(axis=1)
        return (centers * self.face_areas[:, None]).sum(axis=0) / self.face_areas.sum()

    def with_uvs(self, uvs: ArrayLike, texture: Optional[np.ndarray] = None) -> "TriangleMesh":
        return TriangleMesh(vertices=self.vertices, triangles=self.triangles, uvs=uvs,
                            vertex_colors=self.vertex_colors,
                            texture=texture if texture is not None else self.texture)

    def with_texture(self, texture: np.ndarray) -> "TriangleMesh":
        return self.with_uvs(self.uvs, texture)

    def transformed(self, matrix: np.ndarray) -> "TriangleMesh":
        """Apply a 4x4 similarity transform to the vertices."""
        matrix = np.asarray(matrix, dtype=np.float64)
        vertices = self.vertices @ matrix[:3, :3].T + matrix[:3, 3]
        return TriangleMesh(vertices=vertices, triangles=self.triangles, uvs=self.uvs,
                            vertex_colors=self.vertex_colors, texture=self.texture)


# ---------------------------
# Cameras
# ---------------------------

def rigid_inverse(matrix: np.ndarray) -> np.ndarray:
    rot = matrix[:3, :3]
    out = np.eye(4)
    out[:3, :3] = rot.T
    out[:3, 3] = -rot.T @ matrix[:3, 3]
    return out


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    """Pinhole intrinsics plus a world-from-camera rigid pose."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_from_camera: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidInput(f"camera {name} must be finite")
            object.__setattr__(self, name, value)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInput(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise InvalidInput(f"image size must be positive, got {self.width}x{self.height}")

        pose = np.array(self.world_from_camera, dtype=np.float64)
        if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
            raise InvalidInput("world_from_camera must be a finite 4x4 matrix")
        rot = pose[:3, :3]
        if (np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHO_TOL
                or abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL):
            raise InvalidInput("world_from_camera rotation must be orthonormal with det +1")
        if np.max(np.abs(pose[3] - [0.0, 0.0, 0.0, 1.0])) > ORTHO_TOL:
            raise InvalidInput("world_from_camera bottom row must be [0, 0, 0, 1]")
        pose.setflags(write=False)
        object.__setattr__(self, "world_from_camera", pose)

    @classmethod
    def look_at(cls, eye: ArrayLike, target: ArrayLike, up: ArrayLike, fx: float, fy: float,
                cx: float, cy: float, width: int, height: int) -> "PinholeCamera":
        """Camera at `eye` whose optical axis passes through `target`."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            raise InvalidInput("look_at up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        pose = np.eye(4)
        pose[:3, 0] = right
        pose[:3, 1] = down
        pose[:3, 2] = forward
        pose[:3, 3] = eye
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height, world_from_camera=pose)

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int,
                 world_from_camera: Optional[np.ndarray] = None) -> "PinholeCamera":
        """Square-pixel camera with the given horizontal field of view and centered principal point."""
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height,
                   world_from_camera=np.eye(4) if world_from_camera is None else world_from_camera)

    def with_pose(self, world_from_camera: np.ndarray) -> "PinholeCamera":
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                             world_from_camera)

    @cached_property
    def camera_from_world(self) -> np.ndarray:
        return rigid_inverse(self.world_from_camera)

    @property
    def center(self) -> np.ndarray:
        return self.world_from_camera[:3, 3].copy()

    @property
    def optical_axis(self) -> np.ndarray:
        return self.world_from_camera[:3, 2].copy()

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_camera(self, points: ArrayLike) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        m = self.camera_from_world
        return pts @ m[:3, :3].T + m[:3, 3]

    def to_world(self, points_cam: ArrayLike) -> np.ndarray:
        pts = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
        m = self.world_from_camera
        return pts @ m[:3, :3].T + m[:3, 3]

    def project_points(self, points: ArrayLike) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Project world points. Returns (uv, z, visible): pixel coordinates (NaN where
        culled), camera-frame depth, and the mask of points in front of the camera.
        """
        pc = self.to_camera(points)
        z = pc[:, 2]
        visible = z > EPS_Z
        safe_z = np.where(visible, z, 1.0)
        uv = np.empty((len(pc), 2))
        uv[:, 0] = self.fx * pc[:, 0] / safe_z + self.cx
        uv[:, 1] = self.fy * pc[:, 1] / safe_z + self.cy
        uv[~visible] = np.nan
        return uv, z, visible

    def pixel_rays(self, uv: ArrayLike) -> np.ndarray:
        """Camera-frame ray directions with unit Z for continuous pixel coordinates."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        rays = np.ones((len(uv), 3))
        rays[:, 0] = (uv[:, 0] - self.cx) / self.fx
        rays[:, 1] = (uv[:, 1] - self.cy) / self.fy
        return rays

    def unproject_pixels(self, uv: ArrayLike, depth: ArrayLike) -> np.ndarray:
        depth = np.asarray(depth, dtype=np.float64).reshape(-1)
        if np.any(~np.isfinite(depth)) or np.any(depth <= 0):
            raise InvalidDepth("unproject requires finite positive depth")
        return self.to_world(self.pixel_rays(uv) * depth[:, None])

    def pixel_centers(self) -> np.ndarray:
        """(H, W, 2) continuous coordinates of every pixel center."""
        cols, rows = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return np.stack([cols, rows], axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "world_from_camera": [float(x) for x in self.world_from_camera.reshape(-1)]}


def project(cam: PinholeCamera, p: ArrayLike) -> Union[Pixel2, Culled]:
    """Project one world point; points with camera Z <= EPS_Z are CULLED."""
    uv, _, visible = cam.project_points(np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not visible[0]:
        return CULLED
    return Pixel2(float(uv[0, 0]), float(uv[0, 1]))


def unproject(cam: PinholeCamera, px: Union[Pixel2, Sequence[float]], depth: float) -> np.ndarray:
    """World point at camera-frame depth `depth` along the ray through pixel `px`."""
    if not math.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth must be positive, got {depth}")
    return cam.unproject_pixels(np.asarray(px, dtype=np.float64).reshape(1, 2), [depth])[0]


# ---------------------------
# Poses
# ---------------------------

def rotation_from_axis_angle(r: ArrayLike) -> np.ndarray:
    """Rodrigues rotation for an axis-angle vector (radians)."""
    return Rotation.from_rotvec(np.array(r, dtype=np.float64).reshape(3)).as_matrix()


def skew(w: ArrayLike) -> np.ndarray:
    x, y, z = np.asarray(w, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_jacobian(r: ArrayLike) -> np.ndarray:
    """
    dR/dr_i for the axis-angle map, shape (3, 3, 3) indexed [i, row, col].
    Uses the compact exponential-coordinates derivative; the small-angle limit
    is [e_i]_x.
    """
    r = np.asarray(r, dtype=np.float64).reshape(3)
    theta2 = float(r @ r)
    eye = np.eye(3)
    if theta2 < 1e-18:
        return np.stack([skew(eye[i]) for i in range(3)])
    rot = rotation_from_axis_angle(r)
    rx = skew(r)
    out = np.empty((3, 3, 3))
    for i in range(3):
        out[i] = (r[i] * rx + skew(np.cross(r, (eye - rot)[:, i]))) @ rot / theta2
    return out


@dataclass(frozen=True, eq=False)
class PoseParams:
    """
    Learnable similarity transform: p' = exp(log_s) * R(r) @ p + T.
    Scale first, then rotation, then translation.
    """
    T: np.ndarray
    r: np.ndarray
    log_s: float = 0.0

    def __post_init__(self):
        T = np.array(self.T, dtype=np.float64).reshape(3)
        r = np.array(self.r, dtype=np.float64).reshape(3)
        log_s = float(self.log_s)
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(r)) and math.isfinite(log_s)):
            raise InvalidInput("pose parameters must be finite")
        T.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "log_s", log_s)

    @classmethod
    def identity(cls) -> "PoseParams":
        return cls(T=np.zeros(3), r=np.zeros(3), log_s=0.0)

    @classmethod
    def from_vector(cls, vec: ArrayLike) -> "PoseParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(7)
        return cls(T=vec[:3], r=vec[3:6], log_s=vec[6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.T, self.r, [self.log_s]])

    @property
    def scale(self) -> float:
        return math.exp(self.log_s)

    def rotation(self) -> np.ndarray:
        return rotation_from_axis_angle(self.r)

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.scale * self.rotation()
        out[:3, 3] = self.T
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {"T": self.T.tolist(), "r": self.r.tolist(), "log_s": self.log_s}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PoseParams":
        try:
            return cls(T=data["T"], r=data["r"], log_s=data["log_s"])
        except (KeyError, TypeError) as e:
            raise InvalidInput(f"malformed pose ({e!r})") from e


def apply_pose(pose: PoseParams, cloud: PointCloud) -> PointCloud:
    """Scale, rotate, then translate every point; normals are rotated."""
    if cloud.is_empty:
        raise EmptyInput("apply_pose on an empty cloud")
    rot = pose.rotation()
    points = pose.scale * (cloud.points @ rot.T) + pose.T
    normals = None if cloud.normals is None else cloud.normals @ rot.T
    return cloud.with_points(points, normals=normals)
