import numpy as np
import trimesh

from conftest import front_camera, make_quad
from geometry.core import PinholeCamera, TriangleMesh
from layout.scene import merge_meshes
from rendering.conditioning import edge_map
from rendering.rasterizer import rasterize
from rendering.textured import render_textured
from rendering.visibility import visible_in_view
from texturing.propagation import KnownView, KnownViewSet, visibility_mask

TARGET = (0.3, -0.2, 0.1)


def cluttered_scene() -> TriangleMesh:
    """Floor, a cube standing on it and a sphere beside the cube: 334 triangles."""
    floor = TriangleMesh(vertices=[[-3, -0.5, -3], [3, -0.5, -3], [3, -0.5, 3], [-3, -0.5, 3]],
                         triangles=[[0, 2, 1], [0, 3, 2]])
    box = trimesh.creation.box(extents=(1.0, 1.0, 1.0))
    sphere = trimesh.creation.icosphere(subdivisions=2, radius=0.4)
    parts = [floor,
             TriangleMesh(vertices=box.vertices, triangles=box.faces),
             TriangleMesh(vertices=sphere.vertices + [1.0, -0.1, 0.3], triangles=sphere.faces)]
    mesh = merge_meshes(parts)
    assert len(mesh) <= 500
    return mesh


def camera_at(eye) -> PinholeCamera:
    return PinholeCamera.look_at(eye, TARGET, [0, 1, 0], 110, 110, 64, 64, 128, 128)


def ray_cast_visible(mesh: TriangleMesh, cam: PinholeCamera, points: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Brute force: no triangle hit strictly before (1 - tol) of the way to the point."""
    uv, _, in_front = cam.project_points(points)
    inside = in_front & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
    corners = mesh.corners
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    origin = cam.center
    visible = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), 500):
        d = points[start:start + 500] - origin
        p = np.cross(d[:, None, :], e2[None])
        det = np.einsum("ftk,tk->ft", p, e1)
        ok = np.abs(det) > 1e-15
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = origin - corners[:, 0]
        a = np.einsum("ftk,tk->ft", p, s) * inv
        q = np.cross(s, e1)
        b = (d @ q.T) * inv
        t = (e2 * q).sum(axis=1)[None] * inv
        hit = ok & (a >= 0) & (b >= 0) & (a + b <= 1) & (t > 0) & (t < 1 - tol)
        visible[start:start + 500] = ~hit.any(axis=1)
    return visible & inside


def known_view(mesh, cam) -> KnownView:
    gbuf = rasterize(mesh, cam)
    image = np.zeros((cam.height, cam.width, 3))
    return KnownView(camera=cam, image=image, gbuf=gbuf)


def test_mask_agrees_with_ray_casting():
    mesh = cluttered_scene()
    known = KnownViewSet([known_view(mesh, camera_at([2.5, 1.5, 2.5])),
                          known_view(mesh, camera_at([-2.0, 1.0, 2.5]))])
    target = camera_at([0.5, 2.0, -3.0])
    gbuf = rasterize(mesh, target)
    mask = visibility_mask(mesh, target, known, target_gbuf=gbuf)

    use = gbuf.coverage & ~edge_map(gbuf)
    points = gbuf.position[use]
    expected = np.zeros(len(points), dtype=bool)
    for view in known:
        expected |= ray_cast_visible(mesh, view.camera, points)
    assert 0 < expected.sum() < len(points)
    agreement = np.mean(mask[use] == expected)
    assert agreement >= 0.995
    assert not mask[~gbuf.coverage].any()


def test_empty_known_set_gives_empty_mask(cube):
    cam = camera_at([2.0, 1.5, 2.5])
    assert not visibility_mask(cube, cam, KnownViewSet()).any()


def test_same_view_sees_its_whole_render(cube):
    cam = camera_at([2.0, 1.5, 2.5])
    gbuf = rasterize(cube, cam)
    known = KnownViewSet([KnownView(camera=cam, image=render_textured(cube, cam, gbuf), gbuf=gbuf)])
    np.testing.assert_array_equal(visibility_mask(cube, cam, known, target_gbuf=gbuf), gbuf.coverage)


def test_occluder_hides_points_behind_it():
    occluder = make_quad(z=0.0, half=0.5)
    back = make_quad(z=1.0, half=2.0)
    mesh = merge_meshes([occluder, back])
    cam = front_camera(64, 64, 60.0, 3.0)
    gbuf = rasterize(mesh, cam)
    points = np.array([[0.0, 0.0, 1.0], [1.5, 1.5, 1.0], [0.0, 0.0, 0.0]])
    tri_ids = np.array([2, 2, 0])
    np.testing.assert_array_equal(visible_in_view(mesh, gbuf, points, tri_ids), [False, True, True])
