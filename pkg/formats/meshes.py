"""
Mesh IO: trimesh-backed import/export (glTF/GLB, OBJ, PLY) and a lossless .npz archive.

trimesh keeps UVs per vertex with the origin at the bottom-left of the image;
`TriangleMesh` keeps them per corner with the origin at the top-left. The
conversion happens here and nowhere else.
"""

import logging
import zipfile
from pathlib import Path
from typing import Optional, Union

import numpy as np
import trimesh
from PIL import Image

from geometry.core import TriangleMesh
from geometry.errors import InvalidInput
from layout.scene import SceneGraph

from .images import to_uint8

PathLike = Union[str, Path]


def to_trimesh(mesh: TriangleMesh) -> trimesh.Trimesh:
    """Textured meshes are unwelded so every corner keeps its own UV."""
    if mesh.has_uvs and mesh.texture is not None:
        vertices = mesh.corners.reshape(-1, 3)
        faces = np.arange(len(vertices)).reshape(-1, 3)
        uv = mesh.uvs.reshape(-1, 2).copy()
        uv[:, 1] = 1.0 - uv[:, 1]
        material = trimesh.visual.material.PBRMaterial(
            baseColorTexture=Image.fromarray(to_uint8(mesh.texture)))
        visual = trimesh.visual.texture.TextureVisuals(uv=uv, material=material)
        return trimesh.Trimesh(vertices=vertices, faces=faces, visual=visual, process=False)

    tm = trimesh.Trimesh(vertices=np.array(mesh.vertices), faces=np.array(mesh.triangles),
                         process=False)
    if mesh.vertex_colors is not None:
        rgba = np.full((len(mesh.vertices), 4), 255, dtype=np.uint8)
        rgba[:, :3] = to_uint8(mesh.vertex_colors)
        tm.visual.vertex_colors = rgba
    return tm


def _texture_image(material) -> Optional[np.ndarray]:
    image = getattr(material, "baseColorTexture", None)
    if image is None:
        image = getattr(material, "image", None)
    if image is None:
        return None
    return np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0


def from_trimesh(tm: trimesh.Trimesh, logger: Optional[logging.Logger] = None) -> TriangleMesh:
    vertices = np.asarray(tm.vertices, dtype=np.float64)
    faces = np.asarray(tm.faces, dtype=np.int64)
    uvs = texture = colors = None
    visual = tm.visual
    if visual.kind == "texture" and getattr(visual, "uv", None) is not None \
            and len(visual.uv) == len(vertices):
        uv = np.asarray(visual.uv, dtype=np.float64)[:, :2].copy()
        uv[:, 1] = 1.0 - uv[:, 1]
        uvs = uv[faces]
        texture = _texture_image(visual.material)
    elif visual.kind == "vertex":
        colors = np.asarray(visual.vertex_colors, dtype=np.float64)[:, :3] / 255.0
    return TriangleMesh.from_arrays(vertices, faces, uvs=uvs, vertex_colors=colors,
                                    texture=texture, drop_degenerate=True, logger=logger)


def save_mesh_npz(path: PathLike, mesh: TriangleMesh) -> None:
    arrays = {"vertices": mesh.vertices, "triangles": mesh.triangles}
    if mesh.uvs is not None:
        arrays["uvs"] = mesh.uvs
    if mesh.vertex_colors is not None:
        arrays["vertex_colors"] = mesh.vertex_colors
    if mesh.texture is not None:
        arrays["texture"] = mesh.texture
    np.savez_compressed(path, **arrays)


def load_mesh_npz(path: PathLike) -> TriangleMesh:
    with np.load(path) as data:
        if "vertices" not in data or "triangles" not in data:
            raise InvalidInput(f"{path} is not a mesh archive")
        return TriangleMesh(vertices=data["vertices"], triangles=data["triangles"],
                            uvs=data["uvs"] if "uvs" in data else None,
                            vertex_colors=data["vertex_colors"] if "vertex_colors" in data else None,
                            texture=data["texture"] if "texture" in data else None)


def load_mesh(path: PathLike, logger: Optional[logging.Logger] = None) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"mesh file not found: {path}")
    if path.suffix.lower() == ".npz":
        try:
            return load_mesh_npz(path)
        except (OSError, ValueError, zipfile.BadZipFile) as e:
            raise InvalidInput(f"cannot load mesh archive {path}: {e}") from e
    try:
        tm = trimesh.load(str(path), force="mesh", process=False)
    except Exception as e:
        raise InvalidInput(f"cannot load mesh {path}: {e}") from e
    if not isinstance(tm, trimesh.Trimesh) or len(tm.faces) == 0:
        raise InvalidInput(f"{path} contains no triangles")
    return from_trimesh(tm, logger)


def save_mesh(path: PathLike, mesh: TriangleMesh) -> None:
    path = Path(path)
    if path.suffix.lower() == ".npz":
        save_mesh_npz(path, mesh)
    else:
        to_trimesh(mesh).export(str(path))


def export_scene(graph: SceneGraph, path: PathLike) -> None:
    """One glTF node per scene node, carrying its pose as the node transform."""
    scene = trimesh.Scene()
    for node in graph.nodes:
        scene.add_geometry(to_trimesh(node.mesh), node_name=node.name,
                           geom_name=f"{node.name}_mesh", transform=node.pose.matrix())
    scene.export(str(path))
