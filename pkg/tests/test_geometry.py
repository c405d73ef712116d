import math

import numpy as np
import pytest

from conftest import brute_chamfer, front_camera
from geometry.chamfer import NNIndex, chamfer2d, chamfer3d, loss_and_grad, nn_query
from geometry.core import (CULLED, PinholeCamera, Pixel2, PointCloud, PoseParams, TriangleMesh, apply_pose,
                           project, rotation_from_axis_angle, unproject)
from geometry.errors import AllPointsCulled, DegenerateMesh, EmptyInput, InvalidDepth, InvalidInput


def cloud(points) -> PointCloud:
    return PointCloud(points=np.asarray(points, dtype=np.float64).reshape(-1, 3))


class TestPose:
    def test_identity_leaves_cloud_unchanged(self, blob):
        out = apply_pose(PoseParams.identity(), blob)
        np.testing.assert_array_equal(out.points, blob.points)

    def test_translation(self):
        out = apply_pose(PoseParams(T=[1, 0, 0], r=[0, 0, 0]), cloud([0, 0, 0]))
        np.testing.assert_allclose(out.points, [[1, 0, 0]])

    def test_scale_then_rotate(self):
        pose = PoseParams(T=[0, 0, 0], r=[0, 0, math.pi / 2], log_s=math.log(2))
        out = apply_pose(pose, cloud([1, 0, 0]))
        np.testing.assert_allclose(out.points, [[0, 2, 0]], atol=1e-12)

    def test_rotation_examples(self):
        np.testing.assert_allclose(rotation_from_axis_angle([0, 0, 0]), np.eye(3))
        np.testing.assert_allclose(rotation_from_axis_angle([0, 0, math.pi]) @ [1, 0, 0], [-1, 0, 0], atol=1e-12)

    def test_matrix_matches_apply_pose(self, blob, rng):
        pose = PoseParams(T=rng.normal(size=3), r=rng.normal(size=3) * 0.3, log_s=0.2)
        m = pose.matrix()
        np.testing.assert_allclose(apply_pose(pose, blob).points, blob.points @ m[:3, :3].T + m[:3, 3])

    def test_empty_cloud_rejected(self):
        with pytest.raises(EmptyInput):
            apply_pose(PoseParams.identity(), cloud(np.zeros((0, 3))))

    def test_dict_round_trip(self):
        pose = PoseParams(T=[1, 2, 3], r=[0.1, 0.2, 0.3], log_s=-0.5)
        back = PoseParams.from_dict(pose.to_dict())
        np.testing.assert_array_equal(back.as_vector(), pose.as_vector())

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            PoseParams(T=[np.nan, 0, 0], r=[0, 0, 0])


class TestCamera:
    def test_optical_axis_point_projects_to_principal_point(self, camera):
        px = project(camera, camera.to_world([[0, 0, 1]])[0])
        assert px == Pixel2(camera.cx, camera.cy)

    def test_projection_example(self):
        cam = PinholeCamera(fx=100, fy=100, cx=50, cy=50, width=100, height=100)
        assert project(cam, [0.5, 0, 1]) == Pixel2(100.0, 50.0)

    def test_point_behind_camera_is_culled(self):
        cam = PinholeCamera(fx=100, fy=100, cx=50, cy=50, width=100, height=100)
        assert project(cam, [0, 0, -1]) is CULLED
        assert project(cam, [0, 0, 0]) is CULLED

    def test_unproject_principal_point(self):
        cam = PinholeCamera(fx=100, fy=80, cx=50, cy=40, width=100, height=80)
        np.testing.assert_allclose(unproject(cam, (50, 40), 2.5), [0, 0, 2.5])

    def test_round_trip(self, rng):
        cam = PinholeCamera.look_at([1, 2, -3], [0, 0, 0], [0, -1, 0], 300, 310, 160, 120, 320, 240)
        uv = rng.uniform([0, 0], [320, 240], size=(1000, 2))
        depth = rng.uniform(0.1, 50, size=1000)
        back, _, visible = cam.project_points(cam.unproject_pixels(uv, depth))
        assert visible.all()
        assert np.abs(back - uv).max() < 1e-6

    @pytest.mark.parametrize("depth", [0.0, -1.0, float("nan")])
    def test_invalid_depth(self, camera, depth):
        with pytest.raises(InvalidDepth):
            unproject(camera, (10, 10), depth)

    def test_invalid_intrinsics(self):
        with pytest.raises(InvalidInput):
            PinholeCamera(fx=0, fy=1, cx=0, cy=0, width=10, height=10)
        with pytest.raises(InvalidInput):
            PinholeCamera(fx=1, fy=1, cx=0, cy=0, width=10, height=10, world_from_camera=np.diag([2, 1, 1, 1]))

    def test_look_at_centers_target(self):
        cam = PinholeCamera.look_at([3, 1, 2], [0.5, 0.2, -0.1], [0, 1, 0], 100, 100, 64, 48, 128, 96)
        px = project(cam, [0.5, 0.2, -0.1])
        assert px.u == pytest.approx(64) and px.v == pytest.approx(48)


class TestMesh:
    def test_degenerate_triangle_rejected(self):
        with pytest.raises(DegenerateMesh):
            TriangleMesh(vertices=[[0, 0, 0], [1, 0, 0], [2, 0, 0]], triangles=[[0, 1, 2]])

    def test_drop_degenerate(self):
        mesh = TriangleMesh.from_arrays([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]],
                                        [[0, 1, 2], [0, 1, 3]], drop_degenerate=True)
        assert len(mesh) == 1

    def test_index_out_of_range(self):
        with pytest.raises(DegenerateMesh):
            TriangleMesh(vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0]], triangles=[[0, 1, 3]])

    def test_face_normals_follow_winding(self, cube):
        centers = cube.corners.mean(axis=1)
        assert np.all(np.einsum("ij,ij->i", cube.face_normals, centers) > 0)


class TestNNIndex:
    def test_indexed_point(self, rng):
        pts = rng.normal(size=(50, 3))
        idx, sq = nn_query(NNIndex(pts), pts[17])
        assert (idx, sq) == (17, 0.0)

    def test_matches_brute_force(self, rng):
        pts = rng.normal(size=(1000, 3))
        queries = rng.normal(size=(1000, 3))
        idx, sq = NNIndex(pts).query(queries)
        d = ((queries[:, None] - pts[None]) ** 2).sum(-1)
        np.testing.assert_array_equal(idx, d.argmin(axis=1))
        np.testing.assert_allclose(sq, d.min(axis=1), rtol=1e-12)

    def test_tie_goes_to_lower_index(self):
        assert nn_query(NNIndex(np.array([[1.0, 0, 0], [-1.0, 0, 0]])), [0, 0, 0])[0] == 0
        assert nn_query(NNIndex(np.array([[2.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])), [0, 0, 0])[0] == 1
        square = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
        assert nn_query(NNIndex(square[::-1].copy()), [0, 0])[0] == 0

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            NNIndex(np.zeros((0, 3)))


class TestChamfer:
    def test_identical_clouds(self, blob, camera):
        assert chamfer3d(blob, blob) == 0.0
        assert chamfer2d(camera, blob, blob) == 0.0

    def test_single_points(self):
        assert chamfer3d(cloud([0, 0, 0]), cloud([1, 0, 0])) == pytest.approx(2.0)

    def test_symmetric(self, rng):
        a, b = cloud(rng.normal(size=(30, 3))), cloud(rng.normal(size=(45, 3)))
        assert chamfer3d(a, b) == pytest.approx(chamfer3d(b, a), rel=1e-14)

    def test_depth_along_rays_is_invisible_in_2d(self, camera, rng):
        a = cloud(rng.uniform(-0.5, 0.5, size=(100, 3)))
        rays = a.points - camera.center
        b = cloud(camera.center + rays * rng.uniform(1.1, 1.5, size=(100, 1)))
        assert chamfer2d(camera, a, b) < 1e-18
        assert chamfer3d(a, b) > 1e-3

    def test_empty_rejected(self, blob, camera):
        empty = cloud(np.zeros((0, 3)))
        with pytest.raises(EmptyInput):
            chamfer3d(empty, blob)
        with pytest.raises(EmptyInput):
            chamfer2d(camera, blob, empty)

    def test_fully_culled_side(self, camera, blob):
        behind = cloud(camera.center - np.array([0, 0, 1.0]))
        with pytest.raises(AllPointsCulled):
            chamfer2d(camera, blob, behind)

    def test_brute_force_oracle(self, rng):
        cam = front_camera(width=256, height=256, f=200.0)
        for _ in range(200):
            n, m = rng.integers(1, 1001, size=2)
            a = rng.uniform(-1, 1, size=(n, 3))
            b = rng.uniform(-1, 1, size=(m, 3))
            expected3 = brute_chamfer(a, b)
            assert chamfer3d(cloud(a), cloud(b)) == pytest.approx(expected3, rel=1e-10, abs=1e-300)
            ua, _, _ = cam.project_points(a)
            ub, _, _ = cam.project_points(b)
            expected2 = brute_chamfer(ua, ub)
            assert chamfer2d(cam, cloud(a), cloud(b)) == pytest.approx(expected2, rel=1e-10, abs=1e-300)


class TestLossGradient:
    def test_zero_at_global_minimum(self, blob, camera):
        loss, grad = loss_and_grad(PoseParams.identity(), blob, blob, camera, 1.0, 0.05, use2d=True)
        assert loss == 0.0
        assert grad.norm() < 1e-9

    def test_matches_finite_differences(self, rng):
        cam = front_camera(width=256, height=256, f=200.0)
        h = 1e-5
        for _ in range(50):
            M = cloud(rng.uniform(-0.5, 0.5, size=(60, 3)))
            PC = cloud(rng.uniform(-0.5, 0.5, size=(80, 3)))
            vec = np.concatenate([rng.normal(scale=0.1, size=3), rng.normal(scale=0.2, size=3),
                                  [rng.uniform(-0.2, 0.2)]])
            _, grad = loss_and_grad(PoseParams.from_vector(vec), M, PC, cam, 1.0, 0.05, use2d=True)
            fd = np.empty(7)
            for i in range(7):
                step = np.zeros(7)
                step[i] = h
                plus, _ = loss_and_grad(PoseParams.from_vector(vec + step), M, PC, cam, 1.0, 0.05, True)
                minus, _ = loss_and_grad(PoseParams.from_vector(vec - step), M, PC, cam, 1.0, 0.05, True)
                fd[i] = (plus - minus) / (2 * h)
            np.testing.assert_allclose(grad.as_vector(), fd, rtol=1e-4, atol=1e-7 * (1 + np.abs(fd).max()))

    def test_zero_weight_drops_term(self, rng, camera):
        M = cloud(rng.uniform(-0.5, 0.5, size=(40, 3)))
        PC = cloud(rng.uniform(-0.5, 0.5, size=(40, 3)))
        pose = PoseParams(T=[0.1, 0, 0], r=[0, 0.1, 0])
        l3, g3 = loss_and_grad(pose, M, PC, camera, 1.0, 0.0, use2d=True)
        assert l3 == pytest.approx(chamfer3d(apply_pose(pose, M), PC), rel=1e-12)
        l_off, g_off = loss_and_grad(pose, M, PC, camera, 1.0, 0.05, use2d=False)
        assert l_off == l3
        np.testing.assert_array_equal(g_off.as_vector(), g3.as_vector())
