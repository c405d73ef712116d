import asyncio
import csv
import json

import numpy as np
import pytest
from scipy import ndimage

from conftest import make_cube
from formats.cameras import write_camera
from formats.images import write_mask, write_pfm
from formats.meshes import load_mesh, save_mesh
from formats.ply import write_point_cloud
from geometry.core import PinholeCamera, PointCloud, PoseParams, TriangleMesh
from geometry.errors import InvalidInput, NonFiniteLoss
from layout.optimizer import EpochRecord
from layout.scene import merge_meshes
from pipeline import runner
from pipeline.config import PipelineManifest
from pipeline.run_report import RunReport, TraceWriter, validate_report
from rendering.rasterizer import rasterize
from texturing.uv_atlas import rasterize_uv


def run_cli(tmp_path, *argv):
    out = tmp_path / "out"
    args = list(argv) + ["--output-dir", str(out), "--log-dir", str(tmp_path / "logs")]
    code = asyncio.run(runner.run(args))
    return code, out


def read_report(directory):
    with open(directory / "run_report.json", encoding="utf-8") as f:
        report = json.load(f)
    validate_report(report)
    return report


class TestManifest:
    def minimal(self, **extra):
        data = {"version": "1", "texture": {"mesh": "cube.npz", "generator": {"oracle_mesh": "cube.npz"}}}
        data.update(extra)
        return data

    def test_relative_paths_resolve_against_manifest(self, tmp_path):
        manifest = PipelineManifest.from_mapping(self.minimal(seed=7), base_dir=tmp_path)
        assert manifest.texture.mesh == tmp_path / "cube.npz"
        assert manifest.output_dir == tmp_path / "out"
        assert manifest.seed == 7
        assert manifest.scene is None

    def test_seed_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SCENEKIT_SEED", "42")
        assert PipelineManifest.from_mapping(self.minimal(), base_dir=tmp_path).seed == 42

    @pytest.mark.parametrize("data", [
        {"version": "1", "texture": {"mesh": "m.npz", "generator": {"oracle_mesh": "m.npz"}}, "extra": 1},
        {"version": "2", "texture": {"mesh": "m.npz", "generator": {"oracle_mesh": "m.npz"}}},
        {"version": "1"},
        {"version": "1", "texture": {"mesh": "m.npz", "generator": {"command": "x", "oracle_mesh": "m.npz"}}},
        {"version": "1", "texture": {"mesh": "m.npz", "generator": {}}},
        {"version": "1", "texture": {"mesh": "m.npz", "generator": {"command": "x"}, "bake": {"size": 3}}},
        {"version": "1", "scene": {"camera": "c.json", "instances": []}},
        {"version": "1", "scene": {"camera": "c.json", "depth": "d.pfm", "instances": [{"id": 1}]}},
    ])
    def test_invalid(self, tmp_path, data):
        with pytest.raises(InvalidInput):
            PipelineManifest.from_mapping(data, base_dir=tmp_path)

    def test_missing_files(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(self.minimal()))
        with pytest.raises(InvalidInput, match="missing files"):
            PipelineManifest.load(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{")
        with pytest.raises(InvalidInput):
            PipelineManifest.load(path)


class TestRunReport:
    def test_lifecycle(self):
        report = RunReport("eval", {"tau": 0.02, "pred": ["a.ply"]}, 3)
        with report.stage("load"):
            pass
        with report.stage("load"):
            pass
        report.skip("chair#2", "empty mask")
        report.add_metrics({"value": np.float64(1.5), "arr": np.arange(2)})
        report.finish(0)
        validate_report(report.data)
        assert report.data["status"] == "ok"
        assert list(report.data["timings"]) == ["load"]
        assert report.data["metrics"]["arr"] == [0, 1]
        assert report.data["skipped"] == [{"instance": "chair#2", "reason": "empty mask"}]

    def test_schema_violation(self):
        report = RunReport("eval", {}, 0)
        report.data["status"] = "weird"
        with pytest.raises(InvalidInput, match="status"):
            validate_report(report.data)
        report.data["status"] = "ok"
        report.data["exit_code"] = -1
        with pytest.raises(InvalidInput, match="exit_code"):
            validate_report(report.data)
        report.data["exit_code"] = 0
        report.data["notes"] = "unexpected"
        with pytest.raises(InvalidInput, match="notes"):
            validate_report(report.data)
        del report.data["notes"]
        del report.data["outputs"]
        with pytest.raises(InvalidInput, match="outputs"):
            validate_report(report.data)

    def test_trace_writer(self, tmp_path):
        writer = TraceWriter("lamp#4", str(tmp_path), flush_interval=2)
        for epoch in range(3):
            writer(EpochRecord(epoch=epoch, loss=0.5 / (epoch + 1), pose=PoseParams.identity()))
        writer.close()
        with open(tmp_path / "optimize_lamp_4_trace.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == TraceWriter.HEADER
        assert [int(r[1]) for r in rows[1:]] == [0, 1, 2]
        assert float(rows[2][2]) == 0.25


class TestCli:
    def test_eval_identical_clouds(self, tmp_path, rng):
        path = tmp_path / "cloud.ply"
        write_point_cloud(path, PointCloud(points=rng.uniform(size=(200, 3))))
        code, out = run_cli(tmp_path, "eval", "--pred", str(path), "--gt", str(path))
        assert code == 0
        report = read_report(out)
        assert report["status"] == "ok" and report["exit_code"] == 0
        assert report["metrics"]["cd_object"] == 0.0 and report["metrics"]["cd_scene"] == 0.0
        assert report["metrics"]["fscore_object"] == 100.0
        assert (tmp_path / "logs" / "scenekit_eval_log.txt").exists()

    def test_missing_input_exits_with_2(self, tmp_path):
        code, out = run_cli(tmp_path, "eval", "--pred", str(tmp_path / "nope.ply"),
                            "--gt", str(tmp_path / "nope.ply"))
        assert code == 2
        report = read_report(out)
        assert report["status"] == "failed" and report["exit_code"] == 2
        assert "nope.ply" in report["error"]

    def test_missing_views_file_exits_with_2(self, tmp_path):
        save_mesh(tmp_path / "cube.npz", make_cube(texture_res=64))
        code, out = run_cli(tmp_path, "bake", "--mesh", str(tmp_path / "cube.npz"),
                            "--views", str(tmp_path / "nope.json"), "--atlas-res", "64")
        assert code == 2
        assert "nope.json" in read_report(out)["error"]

    def test_malformed_views_entry_exits_with_2(self, tmp_path):
        save_mesh(tmp_path / "cube.npz", make_cube(texture_res=64))
        (tmp_path / "views.json").write_text(json.dumps({"views": [{"name": "front"}]}))
        code, _ = run_cli(tmp_path, "bake", "--mesh", str(tmp_path / "cube.npz"),
                          "--views", str(tmp_path / "views.json"), "--atlas-res", "64")
        assert code == 2

    @pytest.mark.parametrize("content", [None, "{not json", "[1, 2]", '{"cube#1": [0, 0, 0]}'])
    def test_bad_poses_file_exits_with_2(self, tmp_path, content):
        save_mesh(tmp_path / "cube.npz", make_cube(texture_res=64))
        poses = tmp_path / "poses.json"
        if content is not None:
            poses.write_text(content)
        code, out = run_cli(tmp_path, "assemble", "--poses", str(poses),
                            "--mesh", "cube#1", str(tmp_path / "cube.npz"),
                            "--output", str(tmp_path / "scene.glb"))
        assert code == 2
        assert read_report(out)["exit_code"] == 2

    def test_bad_depth_or_mesh_archive_exits_with_2(self, tmp_path):
        write_camera(tmp_path / "camera.json", PinholeCamera.look_at([0, 0, 3], [0, 0, 0], [0, 1, 0],
                                                                     40, 40, 16, 16, 32, 32))
        (tmp_path / "depth.pfm").write_bytes(b"Pf\n32 32\nscale\n" + np.ones(32 * 32, "<f4").tobytes())
        code, _ = run_cli(tmp_path, "extract", "--camera", str(tmp_path / "camera.json"),
                          "--depth", str(tmp_path / "depth.pfm"))
        assert code == 2
        (tmp_path / "broken.npz").write_bytes(b"PK\x03\x04 not really a zip")
        code, _ = run_cli(tmp_path, "condition", "--mesh", str(tmp_path / "broken.npz"), "--resolution", "32")
        assert code == 2

    def test_numerical_abort_exits_with_4(self, tmp_path, monkeypatch):
        async def explode(args, seed, report, logger):
            raise NonFiniteLoss("loss became nan", {"iteration": 3})

        monkeypatch.setitem(runner.HANDLERS, "eval", explode)
        code, out = run_cli(tmp_path, "eval", "--pred", "a", "--gt", "b")
        assert code == 4
        assert read_report(out)["metrics"]["diagnostics"] == {"iteration": 3}

    def test_generator_failure_exits_with_3(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SCENEKIT_GENERATOR_RETRIES", "1")
        save_mesh(tmp_path / "cube.npz", make_cube(texture_res=64))
        code, out = run_cli(tmp_path, "propagate", "--mesh", str(tmp_path / "cube.npz"),
                            "--generator-cmd", "false", "--resolution", "32")
        assert code == 3
        assert read_report(out)["status"] == "failed"

    def test_condition_writes_every_view(self, tmp_path):
        save_mesh(tmp_path / "cube.npz", make_cube(texture_res=64))
        code, out = run_cli(tmp_path, "condition", "--mesh", str(tmp_path / "cube.npz"), "--resolution", "32")
        assert code == 0
        assert len(list(out.glob("view_*/condition.json"))) == 10
        with open(out / "rig.json", encoding="utf-8") as f:
            assert len(json.load(f)["views"]) == 10


def test_texture_pipeline_with_oracle(tmp_path):
    res = 256
    cube = make_cube(texture_res=res)
    save_mesh(tmp_path / "cube.npz", cube)
    manifest = {"version": "1", "output_dir": "result", "seed": 0,
                "texture": {"mesh": "cube.npz", "rig": {"resolution": res},
                            "generator": {"oracle_mesh": "cube.npz"}, "bake": {"atlas_res": res}}}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    code, _ = run_cli(tmp_path, "pipeline", "--config", str(tmp_path / "manifest.json"))
    out = tmp_path / "result"
    assert code == 0
    report = read_report(out)
    assert {"propagate", "bake"} <= set(report["timings"])
    for name in ("textured.npz", "textured.glb", "atlas/albedo.png", "atlas/atlas.json",
                 "views/views.json", "packets/packet_9/accepted.png"):
        assert (out / name).exists(), name

    texture = load_mesh(out / "textured.npz").texture
    ids, _ = rasterize_uv(cube, res)
    owned = ids >= 0
    truth = cube.texture
    change = (np.abs(np.diff(truth, axis=0, prepend=truth[:1])).max(-1) > 0) \
        | (np.abs(np.diff(truth, axis=1, prepend=truth[:, :1])).max(-1) > 0)
    interior = owned & ~ndimage.binary_dilation(change | ~owned, iterations=4)
    assert interior.sum() > 0.4 * owned.sum()
    assert np.abs(texture[interior] - truth[interior]).max() <= 2 / 255


def synthetic_room():
    """Floor, back wall and a unit cube resting on the floor, seen from the front."""
    floor = TriangleMesh(vertices=[[-4, 0, -2], [4, 0, -2], [4, 0, 4], [-4, 0, 4]], triangles=[[0, 2, 1], [0, 3, 2]])
    wall = TriangleMesh(vertices=[[-4, 0, -2], [4, 0, -2], [4, 3, -2], [-4, 3, -2]], triangles=[[0, 1, 2], [0, 2, 3]])
    cube = make_cube(texture_res=64)
    placed = TriangleMesh(vertices=cube.vertices + [0.3, 0.5, 0.2], triangles=cube.triangles)
    return merge_meshes([floor, wall, placed]), cube


def test_scene_pipeline(tmp_path):
    room, cube = synthetic_room()
    cam = PinholeCamera.look_at([0, 1, 3], [0, 0, 0], [0, 1, 0], 120, 120, 64, 48, 128, 96)
    gbuf = rasterize(room, cam)
    assert gbuf.coverage.all()
    write_camera(tmp_path / "camera.json", cam)
    write_pfm(tmp_path / "depth.pfm", gbuf.depth)
    write_mask(tmp_path / "cube_mask.png", gbuf.tri_id >= 4)
    save_mesh(tmp_path / "cube.npz", cube)
    manifest = {
        "version": "1", "output_dir": "result", "seed": 1,
        "scene": {"camera": "camera.json", "depth": "depth.pfm",
                  "instances": [{"id": 1, "label": "cube", "mask": "cube_mask.png", "mesh": "cube.npz"}],
                  "optim": {"epochs": 3, "iters_per_epoch": 100, "warmup_3d_iters": 60, "max_points": 1024}},
    }
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    code, _ = run_cli(tmp_path, "pipeline", "--config", str(tmp_path / "manifest.json"))
    out = tmp_path / "result"
    assert code == 0
    report = read_report(out)
    assert [entry["instance"] for entry in report["instances"]] == ["cube#1", "background"]
    assert report["seed"] == 1
    assert (out / "scene.glb").exists()
    with open(out / "poses.json", encoding="utf-8") as f:
        poses = json.load(f)
    assert set(poses) == {"cube#1", "background"}
    pose = PoseParams.from_dict(poses["cube#1"])
    assert np.all(np.isfinite(pose.matrix())) and pose.scale > 0
    assert (tmp_path / "logs" / "optimize_cube_1_trace.csv").exists()
