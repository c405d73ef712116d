"""
PLY point clouds through trimesh.

Written as binary little-endian: float x,y,z, uchar red,green,blue,alpha
when colored, and the vertex attributes float nx,ny,nz and int row,col
(source pixel) when present. Reading takes any vertex element trimesh
parses, in either encoding and wherever the element sits in the file.
"""

from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import trimesh

from geometry.core import PointCloud
from geometry.errors import InvalidInput

PathLike = Union[str, Path]


def write_point_cloud(path: PathLike, cloud: PointCloud) -> None:
    colors = None
    if cloud.colors is not None:
        rgb = np.round(cloud.colors * 255.0).astype(np.uint8)
        colors = np.column_stack([rgb, np.full(len(cloud), 255, dtype=np.uint8)])
    pc = trimesh.PointCloud(cloud.points, colors=colors)

    attributes: Dict[str, np.ndarray] = {}
    if cloud.normals is not None:
        for i, name in enumerate(("nx", "ny", "nz")):
            attributes[name] = cloud.normals[:, i].astype(np.float32)
    if cloud.pixels is not None:
        attributes["row"] = cloud.pixels[:, 0].astype(np.int32)
        attributes["col"] = cloud.pixels[:, 1].astype(np.int32)
    pc.vertex_attributes = attributes

    Path(path).write_bytes(trimesh.exchange.ply.export_ply(pc, encoding="binary"))


def _vertex_fields(loaded: Dict[str, Any]) -> Dict[str, np.ndarray]:
    # every vertex property as parsed, including the ones trimesh does not interpret
    raw = loaded.get("metadata", {}).get("_ply_raw", {}).get("vertex", {}).get("data")
    fields = {k: np.asarray(v) for k, v in (loaded.get("vertex_attributes") or {}).items()}
    if raw is not None:
        names = raw.dtype.names if hasattr(raw, "dtype") else list(raw.keys())
        for name in names or ():
            fields.setdefault(name, np.asarray(raw[name]))
    return fields


def read_point_cloud(path: PathLike) -> PointCloud:
    try:
        with open(path, "rb") as f:
            loaded = trimesh.exchange.ply.load_ply(f)
    except OSError as e:
        raise InvalidInput(f"cannot read point cloud {path}: {e}") from e
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise InvalidInput(f"{path} is not a readable PLY file: {e}") from e

    fields = _vertex_fields(loaded)
    if {"x", "y", "z"} <= fields.keys():
        points = np.column_stack([fields["x"], fields["y"], fields["z"]])
    elif loaded.get("vertices") is not None:
        points = loaded["vertices"]
    else:
        raise InvalidInput(f"{path}: no vertex element with x/y/z")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)

    colors = normals = pixels = None
    if {"red", "green", "blue"} <= fields.keys():
        colors = np.column_stack([fields["red"], fields["green"], fields["blue"]]).astype(np.float64) / 255.0
    if {"nx", "ny", "nz"} <= fields.keys():
        normals = np.column_stack([fields["nx"], fields["ny"], fields["nz"]]).astype(np.float64)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        # float32 storage loses unit length; renormalize and drop zero normals
        normals = None if np.any(lengths == 0) else normals / lengths
    if {"row", "col"} <= fields.keys():
        pixels = np.column_stack([fields["row"], fields["col"]]).astype(np.int64)
    return PointCloud(points=points, colors=colors, normals=normals, pixels=pixels)
