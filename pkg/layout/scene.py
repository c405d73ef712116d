"""Scene graph assembly and surface sampling of generated assets."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import trimesh

from geometry.core import PointCloud, PoseParams, TriangleMesh
from geometry.errors import EmptyInput, InvalidInput


@dataclass(frozen=True, eq=False)
class SceneNode:
    """One separable asset: a canonical-space mesh and its placement."""
    name: str
    mesh: TriangleMesh
    pose: PoseParams
    is_background: bool = False

    def world_mesh(self) -> TriangleMesh:
        return self.mesh.transformed(self.pose.matrix())


@dataclass
class SceneGraph:
    nodes: List[SceneNode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def background(self) -> Optional[SceneNode]:
        return next((n for n in self.nodes if n.is_background), None)

    @property
    def instances(self) -> List[SceneNode]:
        return [n for n in self.nodes if not n.is_background]

    def to_dict(self) -> Dict[str, Any]:
        return {"nodes": [{"name": n.name, "background": n.is_background,
                           "triangles": len(n.mesh), "pose": n.pose.to_dict()}
                          for n in self.nodes]}


def assemble_scene(instances: Sequence[Tuple[TriangleMesh, PoseParams]],
                   background: Optional[Tuple[TriangleMesh, PoseParams]] = None,
                   names: Optional[Sequence[str]] = None) -> SceneGraph:
    """One node per instance with its own transform; meshes are never merged or welded."""
    if names is not None and len(names) != len(instances):
        raise InvalidInput("names must match the number of instances")
    graph = SceneGraph()
    for i, (mesh, pose) in enumerate(instances):
        name = names[i] if names is not None else f"instance_{i}"
        graph.nodes.append(SceneNode(name=name, mesh=mesh, pose=pose))
    if background is not None:
        mesh, pose = background
        graph.nodes.append(SceneNode(name="background", mesh=mesh, pose=pose, is_background=True))
    return graph


def merge_meshes(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    """Concatenate meshes into one (used for the background's plane patches)."""
    if not meshes:
        raise EmptyInput("no meshes to merge")
    vertices, triangles, colors = [], [], []
    offset = 0
    with_colors = all(m.vertex_colors is not None for m in meshes)
    for m in meshes:
        vertices.append(m.vertices)
        triangles.append(m.triangles + offset)
        offset += len(m.vertices)
        if with_colors:
            colors.append(m.vertex_colors)
    return TriangleMesh(vertices=np.concatenate(vertices), triangles=np.concatenate(triangles),
                        vertex_colors=np.concatenate(colors) if with_colors else None)


def sample_surface(mesh: TriangleMesh, count: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform samples on the mesh surface, with face normals."""
    if count < 1:
        raise InvalidInput(f"sample count must be >= 1, got {count}")
    if not len(mesh):
        raise EmptyInput("cannot sample an empty mesh")
    tm = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)
    points, face_index = trimesh.sample.sample_surface(tm, count, seed=seed)
    return PointCloud(points=np.asarray(points), normals=mesh.face_normals[face_index])
