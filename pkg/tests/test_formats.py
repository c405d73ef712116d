import json

import numpy as np
import pytest

from conftest import front_camera, make_quad
from formats.atlas import save_atlas
from formats.cameras import read_camera, write_camera
from formats.conditions import read_condition, write_condition
from formats.images import read_image, read_mask, read_pfm, write_image, write_mask, write_pfm
from formats.meshes import load_mesh, save_mesh
from formats.ply import read_point_cloud, write_point_cloud
from geometry.core import PinholeCamera, PointCloud
from geometry.errors import InvalidInput
from rendering.conditioning import edge_map, pack_condition
from rendering.rasterizer import rasterize
from texturing.baking import TexelAtlas, dilate_atlas


class TestPfm:
    def test_rows_top_first(self, tmp_path):
        data = np.arange(12, dtype=np.float32).reshape(3, 4).astype(np.float64)
        path = tmp_path / "depth.pfm"
        write_pfm(path, data)
        np.testing.assert_array_equal(read_pfm(path), data)
        raw = path.read_bytes().split(b"\n", 3)[3]
        # bottom row is stored first
        np.testing.assert_array_equal(np.frombuffer(raw, dtype="<f4")[:4], data[2])

    def test_color(self, tmp_path):
        data = np.linspace(-1, 1, 2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3).astype(np.float64)
        write_pfm(tmp_path / "c.pfm", data)
        np.testing.assert_array_equal(read_pfm(tmp_path / "c.pfm"), data)

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "x.pfm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(InvalidInput):
            read_pfm(tmp_path / "x.pfm")
        with pytest.raises(InvalidInput):
            read_pfm(tmp_path / "missing.pfm")

    @pytest.mark.parametrize("scale", [b"abc", b"0.0", b"nan"])
    def test_rejects_bad_scale(self, tmp_path, scale):
        (tmp_path / "s.pfm").write_bytes(b"Pf\n1 1\n" + scale + b"\n" + np.zeros(1, "<f4").tobytes())
        with pytest.raises(InvalidInput, match="scale"):
            read_pfm(tmp_path / "s.pfm")

    def test_rejects_truncated_payload(self, tmp_path):
        (tmp_path / "t.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + np.zeros(3, "<f4").tobytes() + b"\x00")
        with pytest.raises(InvalidInput, match="expected 4 floats"):
            read_pfm(tmp_path / "t.pfm")


def test_png_is_exact_on_8bit_levels(tmp_path):
    image = np.random.default_rng(0).integers(0, 256, size=(5, 7, 3)) / 255.0
    write_image(tmp_path / "a.png", image)
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), image)
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 2] = True
    write_mask(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)
    with pytest.raises(InvalidInput):
        write_image(tmp_path / "bad.png", np.zeros((2, 2, 4)))


class TestPly:
    def test_attributes_survive(self, tmp_path):
        cloud = PointCloud(points=[[0.1, 0.2, 0.3], [1e-7, -5.5, 2.0]],
                           colors=[[0, 1, 51 / 255], [1, 1, 1]],
                           normals=[[0, 0, 1], [1, 0, 0]],
                           pixels=[[3, 4], [0, 9]])
        write_point_cloud(tmp_path / "c.ply", cloud)
        back = read_point_cloud(tmp_path / "c.ply")
        np.testing.assert_array_equal(back.points, cloud.points.astype(np.float32))
        np.testing.assert_allclose(back.colors, cloud.colors)
        np.testing.assert_array_equal(back.normals, cloud.normals)
        np.testing.assert_array_equal(back.pixels, cloud.pixels)

    def test_plain_cloud(self, tmp_path, rng):
        cloud = PointCloud(points=rng.uniform(size=(50, 3)))
        write_point_cloud(tmp_path / "c.ply", cloud)
        assert (tmp_path / "c.ply").read_bytes().startswith(b"ply\nformat binary_little_endian 1.0")
        back = read_point_cloud(tmp_path / "c.ply")
        np.testing.assert_allclose(back.points, cloud.points, rtol=1e-6)
        assert back.colors is None and back.normals is None and back.pixels is None

    def test_ascii(self, tmp_path):
        text = ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                "property float z\nend_header\n0 0 1\n1.5 2 3\n")
        (tmp_path / "a.ply").write_text(text)
        np.testing.assert_allclose(read_point_cloud(tmp_path / "a.ply").points, [[0, 0, 1], [1.5, 2, 3]])

    def test_vertex_element_after_another_element(self, tmp_path):
        header = ("ply\nformat binary_little_endian 1.0\nelement sensor 1\nproperty float gain\n"
                  "property float offset\nelement vertex 2\nproperty float x\nproperty float y\n"
                  "property float z\nproperty int row\nproperty int col\nend_header\n")
        vertex = np.array([(0.5, 1.0, 2.0, 7, 8), (-1.0, 0.25, 4.0, 1, 2)],
                          dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("row", "<i4"), ("col", "<i4")])
        body = np.array([9.0, -9.0], dtype="<f4").tobytes() + vertex.tobytes()
        (tmp_path / "s.ply").write_bytes(header.encode("ascii") + body)
        back = read_point_cloud(tmp_path / "s.ply")
        np.testing.assert_array_equal(back.points, [[0.5, 1.0, 2.0], [-1.0, 0.25, 4.0]])
        np.testing.assert_array_equal(back.pixels, [[7, 8], [1, 2]])

    def test_not_ply(self, tmp_path):
        (tmp_path / "x.ply").write_text("hello\n")
        with pytest.raises(InvalidInput):
            read_point_cloud(tmp_path / "x.ply")
        with pytest.raises(InvalidInput):
            read_point_cloud(tmp_path / "missing.ply")


class TestCamera:
    def test_json(self, tmp_path):
        cam = PinholeCamera.look_at([1, 2, 3], [0, 0, 0], [0, 1, 0], 500, 510, 320, 240, 640, 480)
        write_camera(tmp_path / "cam.json", cam)
        back = read_camera(tmp_path / "cam.json")
        assert (back.fx, back.fy, back.cx, back.cy, back.width, back.height) == (500, 510, 320, 240, 640, 480)
        np.testing.assert_array_equal(back.world_from_camera, cam.world_from_camera)

    def test_missing_key(self, tmp_path):
        (tmp_path / "cam.json").write_text(json.dumps({"fx": 1}))
        with pytest.raises(InvalidInput):
            read_camera(tmp_path / "cam.json")


class TestMeshes:
    def test_npz_is_lossless(self, tmp_path, cube):
        save_mesh(tmp_path / "cube.npz", cube)
        back = load_mesh(tmp_path / "cube.npz")
        np.testing.assert_array_equal(back.vertices, cube.vertices)
        np.testing.assert_array_equal(back.uvs, cube.uvs)
        np.testing.assert_array_equal(back.texture, cube.texture)

    def test_glb_keeps_top_left_uvs(self, tmp_path):
        texture = np.random.default_rng(0).integers(0, 256, size=(8, 8, 3)) / 255.0
        quad = make_quad(texture=texture)
        save_mesh(tmp_path / "quad.glb", quad)
        back = load_mesh(tmp_path / "quad.glb")
        assert len(back) == 2
        # corner UVs follow world x/y regardless of vertex order
        expected = (back.corners[..., :2] + 1.0) / 2.0
        np.testing.assert_allclose(back.uvs, expected, atol=1e-6)
        np.testing.assert_array_equal(back.texture, texture)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidInput):
            load_mesh(tmp_path / "nope.glb")


def test_condition_files(tmp_path):
    quad = make_quad()
    gbuf = rasterize(quad, front_camera(32, 32, 40.0, 3.0))
    tensor = pack_condition(gbuf, edge_map(gbuf), quad.bounds())
    write_condition(tmp_path / "cond", tensor)
    back = read_condition(tmp_path / "cond")
    np.testing.assert_allclose(back.data[..., :6], tensor.data[..., :6], atol=0.5 / 255 + 1e-12)
    np.testing.assert_array_equal(back.edge, tensor.edge)
    manifest = json.loads((tmp_path / "cond" / "condition.json").read_text())
    assert len(manifest["files"]) == 7


def test_save_atlas(tmp_path):
    conf = np.zeros((4, 4))
    conf[:2] = 1.0
    color = np.zeros((4, 4, 3))
    color[:2] = 0.4
    atlas = dilate_atlas(TexelAtlas(color_sum=color, confidence=conf), radius=1)
    roughness = tmp_path / "rough.png"
    write_image(roughness, np.full((2, 2), 0.5))
    save_atlas(tmp_path / "atlas", atlas, materials={"roughness": roughness})
    manifest = json.loads((tmp_path / "atlas" / "atlas.json").read_text())
    assert manifest["materials"] == {"metallic": None, "roughness": "roughness.png", "bump": None}
    assert manifest["files"]["dilated_mask"] == "albedo_dilated.png"
    assert manifest["dilated_texels"] == 4
    baked = read_mask(tmp_path / "atlas" / "albedo_valid.png")
    dilated = read_mask(tmp_path / "atlas" / "albedo_dilated.png")
    np.testing.assert_array_equal(baked, conf > 0)
    np.testing.assert_array_equal(dilated[2], True)
    assert not (baked & dilated).any() and not dilated[3].any()
    np.testing.assert_allclose(read_pfm(tmp_path / "atlas" / "albedo.pfm")[:3], 0.4, atol=1e-7)
    with pytest.raises(InvalidInput):
        save_atlas(tmp_path / "atlas2", atlas, materials={"sheen": roughness})

