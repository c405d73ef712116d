"""
Subcommand implementations behind the scenekit CLI.

Each handler takes the parsed arguments, the run seed, the run report and the
run logger. Errors propagate as SceneKitError subclasses; `run` maps them to
exit codes and always writes the run report.
"""

import argparse
import json
import logging
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from extraction.cleanup import estimate_normals, remove_outliers
from extraction.planes import fit_planes, plane_to_mesh, project_to_plane
from extraction.pointmap import DepthMap, InstanceMask, depth_to_pointmap, mask_out_foreground, segment_instance
from formats.atlas import save_atlas
from formats.cameras import camera_from_dict, read_camera
from formats.conditions import write_condition
from formats.images import read_image, read_mask, read_pfm, write_image
from formats.meshes import export_scene, load_mesh, save_mesh
from formats.ply import read_point_cloud, write_point_cloud
from geometry.core import PinholeCamera, PointCloud, PoseParams, TriangleMesh
from geometry.errors import DegeneratePlane, EmptyInstance, InvalidInput, NonFiniteLoss, SceneKitError
from layout.metrics import DEFAULT_TAU, scene_metrics
from layout.optimizer import LOSS_MODES, OptimConfig, optimize_pose
from layout.scene import assemble_scene, merge_meshes, sample_surface
from rendering.conditioning import DEFAULT_EDGE_THRESHOLD, edge_map, pack_condition
from rendering.rasterizer import rasterize
from rendering.rig import RigConfig, ViewRig, rig_for_mesh
from texturing.baking import BakeConfig, bake, dilate_atlas, prepare_uvs, view_confidence
from texturing.generators import CommandGenerator, CommandHook, OracleGenerator
from texturing.propagation import KnownView, KnownViewSet, propagation_loop

from .config import PipelineManifest, PlaneConfig, default_seed
from .log_setup import setup_logger
from .run_report import RunReport, TraceWriter

COMMANDS = ("extract", "optimize", "assemble", "background", "condition", "propagate", "bake",
            "eval", "pipeline")


# ---------------------------
# Shared steps
# ---------------------------

def load_depth(path) -> DepthMap:
    depth = read_pfm(path)
    if depth.ndim == 3:
        depth = depth[..., 0]
    return DepthMap(depth)


def clean_cloud(cloud: PointCloud, cam: PinholeCamera, k: int, std_ratio: float,
                logger: logging.Logger) -> PointCloud:
    cloud = remove_outliers(cloud, k, std_ratio, logger=logger)
    if len(cloud) >= 3:
        cloud = estimate_normals(cloud, k, camera_center=cam.center, logger=logger)
    return cloud


def extract_clouds(cam: PinholeCamera, depth: DepthMap, image: Optional[np.ndarray],
                   masks: Sequence[InstanceMask], report: RunReport, logger: logging.Logger,
                   k: int = 16, std_ratio: float = 2.0,
                   clean: bool = True) -> Tuple[PointCloud, Dict[str, PointCloud]]:
    """Scene pointmap plus one cleaned cloud per instance mask; empty instances are skipped."""
    scene = depth_to_pointmap(cam, depth, image)
    logger.info(f"[extract] pointmap: {len(scene)} points")
    instances: Dict[str, PointCloud] = {}
    for mask in masks:
        try:
            cloud = segment_instance(scene, mask)
        except EmptyInstance as e:
            report.skip(mask.tag, str(e))
            continue
        if clean:
            cloud = clean_cloud(cloud, cam, k, std_ratio, logger)
        instances[mask.tag] = cloud
        logger.info(f"[extract] [{mask.tag}] {len(cloud)} points")
    return scene, instances


def optimize_instance(tag: str, source: PointCloud, target: PointCloud, cam: PinholeCamera,
                      cfg: OptimConfig, report: RunReport, logger: logging.Logger,
                      init: Optional[PoseParams] = None) -> Optional[PoseParams]:
    if len(target) < cfg.min_target_points:
        report.skip(tag, f"target cloud has {len(target)} points (< {cfg.min_target_points})")
        return None
    trace_writer = TraceWriter(tag, report.log_dir)
    try:
        pose, trace = optimize_pose(source, target, cam, cfg, logger=logger, init=init,
                                    on_epoch=trace_writer, tag=tag)
    finally:
        trace_writer.close()
    report.add_instance(tag, trace, {"trace_csv": trace_writer.filename})
    return pose


def source_cloud(path: Path, count: int, seed: int, logger: logging.Logger) -> Tuple[PointCloud, Optional[TriangleMesh]]:
    """Registration source: a PLY point cloud as-is, or surface samples of a mesh."""
    if path.suffix.lower() == ".ply":
        try:
            return read_point_cloud(path), None
        except InvalidInput:
            pass
    mesh = load_mesh(path, logger)
    return sample_surface(mesh, count, seed), mesh


def reconstruct_background(cam: PinholeCamera, depth: DepthMap, image: Optional[np.ndarray],
                           planes_cfg: PlaneConfig, seed: int,
                           logger: logging.Logger) -> Tuple[TriangleMesh, PointCloud]:
    cloud = remove_outliers(depth_to_pointmap(cam, depth, image), logger=logger)
    min_inliers = int(np.ceil(planes_cfg.min_inlier_ratio * len(cloud)))
    planes = fit_planes(cloud, planes_cfg.max_planes, planes_cfg.inlier_tol, min_inliers, seed,
                        planes_cfg.iterations, logger=logger)
    if not planes:
        raise InvalidInput("no background plane found")
    meshes = []
    for i, plane in enumerate(planes):
        inliers = project_to_plane(plane, cloud.subset(plane.inliers))
        try:
            meshes.append(plane_to_mesh(plane, inliers, planes_cfg.resolution))
        except DegeneratePlane as e:
            logger.warning(f"[background] plane {i} skipped: {e}")
    if not meshes:
        raise InvalidInput("every background plane was degenerate")
    return merge_meshes(meshes), cloud


def optimize_background(mesh: TriangleMesh, cloud: PointCloud, cam: PinholeCamera, cfg: OptimConfig,
                        report: RunReport, logger: logging.Logger) -> PoseParams:
    """The background is built in scene space, so its pose starts at identity."""
    source = sample_surface(mesh, cfg.max_points, cfg.seed)
    pose = optimize_instance("background", source, cloud, cam, cfg, report, logger,
                             init=PoseParams.identity())
    return pose if pose is not None else PoseParams.identity()


def read_json(path, what: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInput(f"cannot read {what} {path}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidInput(f"{what} {path} must hold a JSON object")
    return data


def load_views(path: Path, mesh: TriangleMesh, smooth_normals: bool = False) -> KnownViewSet:
    data = read_json(path, "views file")
    views = KnownViewSet()
    for item in data.get("views", []):
        try:
            cam = camera_from_dict(item["camera"])
            image_path = path.parent / item["image"]
        except (KeyError, TypeError) as e:
            raise InvalidInput(f"{path}: malformed view entry ({e!r})") from e
        image = read_image(image_path)
        views.append(KnownView(camera=cam, image=image, gbuf=rasterize(mesh, cam, smooth_normals),
                               weight=float(item.get("weight", 1.0)), name=item.get("name", "")))
    if not len(views):
        raise InvalidInput(f"{path} lists no views")
    return views


def save_views(directory: Path, views: KnownViewSet) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, view in enumerate(views):
        filename = f"view_{i}_{view.name}.png"
        write_image(directory / filename, view.image)
        entries.append({"name": view.name, "weight": view.weight, "image": filename,
                        "camera": view.camera.to_dict()})
    path = directory / "views.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"views": entries}, f, indent=2)
    return path


async def apply_hooks(views: KnownViewSet, hooks: Sequence[CommandHook], workdir: Path) -> KnownViewSet:
    if not hooks:
        return views
    out = KnownViewSet()
    for i, view in enumerate(views):
        image = view.image
        for hook in hooks:
            image = await hook(i, image, workdir / f"hooks_{i}")
        out.append(KnownView(camera=view.camera, image=image, gbuf=view.gbuf, weight=view.weight,
                             name=view.name, edges=view.edges))
    return out


def bake_views(mesh: TriangleMesh, views: KnownViewSet, cfg: BakeConfig,
               logger: logging.Logger):
    confs = [view_confidence(v.gbuf, v.camera, v.edges, v.weight, cfg.alpha_deg, cfg.cosine_weighting)
             for v in views]
    atlas = bake(mesh, views, confs, cfg.atlas_res, cfg.depth_tol, logger=logger)
    return dilate_atlas(atlas, cfg.dilate_radius)


def write_textured(output_dir: Path, mesh: TriangleMesh, atlas, materials, report: RunReport) -> TriangleMesh:
    files = save_atlas(output_dir / "atlas", atlas, materials)
    for path in files.values():
        report.add_output(path)
    textured = mesh.with_texture(atlas.color)
    for name in ("textured.npz", "textured.glb"):
        save_mesh(output_dir / name, textured)
        report.add_output(output_dir / name)
    report.add_metrics({"atlas": atlas.stats()})
    return textured


def parse_materials(items: Optional[Sequence[str]]) -> Dict[str, Path]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InvalidInput(f"--material expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        out[name.strip()] = Path(path.strip())
    return out


def parse_mask_arg(value: str) -> Tuple[int, str, Path]:
    parts = value.split(":", 2)
    if len(parts) != 3:
        raise InvalidInput(f"--mask expects ID:LABEL:PATH, got {value!r}")
    try:
        return int(parts[0]), parts[1], Path(parts[2])
    except ValueError as e:
        raise InvalidInput(f"--mask id must be an integer: {value!r}") from e


def write_json(path: Path, data: Any, report: RunReport) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    report.add_output(path)


def optim_config_from_args(args: argparse.Namespace, seed: int) -> OptimConfig:
    cfg = OptimConfig()
    if getattr(args, "optim_config", None):
        cfg = OptimConfig.from_mapping(read_json(args.optim_config, "optimizer config"))
    overrides = {"lambda1": args.lambda1, "lambda2": args.lambda2, "lr": args.lr,
                 "max_points": args.max_points, "loss_mode": args.loss_mode}
    cfg = replace(cfg, seed=seed, **{k: v for k, v in overrides.items() if v is not None})
    if args.epochs is not None or args.iters is not None:
        cfg = cfg.scaled(args.epochs or cfg.epochs, args.iters or cfg.iters_per_epoch)
    return cfg


def rig_config_from_args(args: argparse.Namespace) -> RigConfig:
    return RigConfig(radius=args.radius, resolution=args.resolution, fov_deg=args.fov,
                     smooth_normals=args.smooth_normals)


# ---------------------------
# Subcommands
# ---------------------------

async def cmd_extract(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    cam = read_camera(args.camera)
    depth = load_depth(args.depth)
    image = read_image(args.image) if args.image else None
    masks = [InstanceMask(read_mask(path), instance_id=i, label=label)
             for i, label, path in map(parse_mask_arg, args.mask or [])]
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with report.stage("extract"):
        scene, instances = extract_clouds(cam, depth, image, masks, report, logger,
                                          args.outlier_k, args.outlier_std, not args.no_clean)
    write_point_cloud(out / "scene.ply", scene)
    report.add_output(out / "scene.ply")
    for tag, cloud in instances.items():
        path = out / f"instance_{tag.replace('#', '_')}.ply"
        write_point_cloud(path, cloud)
        report.add_output(path)


async def cmd_optimize(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    cam = read_camera(args.camera)
    cfg = optim_config_from_args(args, seed)
    report.add_metrics({"optim_config": cfg.to_dict()})
    poses: Dict[str, Any] = {}
    for name, target_path, source_path in args.instance:
        target = read_point_cloud(target_path)
        source, _ = source_cloud(Path(source_path), cfg.max_points, seed, logger)
        with report.stage(f"optimize:{name}"):
            pose = optimize_instance(name, source, target, cam, cfg, report, logger)
        if pose is not None:
            poses[name] = pose.to_dict()
    write_json(Path(args.output_dir) / "poses.json", poses, report)


async def cmd_assemble(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    poses = read_json(args.poses, "poses file")
    instances, names = [], []
    for name, path in args.mesh:
        if name not in poses:
            report.skip(name, "no pose in the poses file")
            continue
        instances.append((load_mesh(path, logger), PoseParams.from_dict(poses[name])))
        names.append(name)
    background = None
    if args.background:
        pose = PoseParams.from_dict(poses["background"]) if "background" in poses else PoseParams.identity()
        background = (load_mesh(args.background, logger), pose)
    graph = assemble_scene(instances, background, names=names)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    export_scene(graph, args.output)
    report.add_output(args.output)
    logger.info(f"[assemble] {len(graph)} nodes written to {args.output}")


async def cmd_background(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    cam = read_camera(args.camera)
    depth = load_depth(args.depth)
    if args.mask:
        masks = [InstanceMask(read_mask(path), instance_id=i, label=label)
                 for i, label, path in map(parse_mask_arg, args.mask)]
        depth = mask_out_foreground(depth, masks)
    image = read_image(args.image) if args.image else None
    planes_cfg = PlaneConfig(max_planes=args.max_planes, inlier_tol=args.inlier_tol,
                             min_inlier_ratio=args.min_inlier_ratio, resolution=args.grid)
    out = Path(args.output_dir)
    with report.stage("planes"):
        mesh, cloud = reconstruct_background(cam, depth, image, planes_cfg, seed, logger)
    cfg = optim_config_from_args(args, seed)
    with report.stage("optimize:background"):
        pose = optimize_background(mesh, cloud, cam, cfg, report, logger)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("background.npz", "background.ply"):
        save_mesh(out / name, mesh)
        report.add_output(out / name)
    write_json(out / "background_pose.json", {"background": pose.to_dict()}, report)


async def cmd_condition(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    mesh = load_mesh(args.mesh, logger)
    rig = rig_for_mesh(mesh, rig_config_from_args(args))
    bounds = mesh.bounds()
    out = Path(args.output_dir)
    with report.stage("condition"):
        for i, view in enumerate(rig):
            gbuf = rasterize(mesh, view.camera, smooth_normals=args.smooth_normals)
            tensor = pack_condition(gbuf, edge_map(gbuf, args.edge_threshold), bounds)
            path = write_condition(out / f"view_{i}_{view.name}", tensor)
            report.add_output(path)
            logger.info(f"[condition] view {i + 1}/{len(rig)} ({view.name}) written")
    write_json(out / "rig.json", rig.to_dict(), report)


def make_generator(command: Optional[str], oracle_mesh: Optional[Path], logger: logging.Logger):
    if oracle_mesh is not None:
        return OracleGenerator(load_mesh(oracle_mesh, logger))
    if command:
        return CommandGenerator(command, logger=logger)
    raise InvalidInput("a generator command or an oracle mesh is required")


def make_hooks(delight_cmd: Optional[str], upscale_cmd: Optional[str],
               logger: logging.Logger) -> List[CommandHook]:
    hooks = []
    if delight_cmd:
        hooks.append(CommandHook(delight_cmd, "delight", logger=logger))
    if upscale_cmd:
        hooks.append(CommandHook(upscale_cmd, "upscale", logger=logger))
    return hooks


async def run_propagation(mesh: TriangleMesh, rig: ViewRig, generator, out: Path, prompt: str,
                          cfg: BakeConfig, smooth_normals: bool, hooks: Sequence[CommandHook],
                          report: RunReport, logger: logging.Logger) -> KnownViewSet:
    with report.stage("propagate"):
        views = await propagation_loop(mesh, rig, generator, workdir=out / "packets", prompt=prompt,
                                       depth_tol=cfg.depth_tol, edge_threshold=cfg.edge_threshold,
                                       alpha_deg=cfg.alpha_deg, cosine_weighting=cfg.cosine_weighting,
                                       smooth_normals=smooth_normals, logger=logger)
    with report.stage("hooks"):
        views = await apply_hooks(views, hooks, out / "packets")
    report.add_output(save_views(out / "views", views))
    return views


async def cmd_propagate(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    mesh = load_mesh(args.mesh, logger)
    rig = rig_for_mesh(mesh, rig_config_from_args(args))
    generator = make_generator(args.generator_cmd, Path(args.oracle_mesh) if args.oracle_mesh else None, logger)
    cfg = BakeConfig(depth_tol=args.depth_tol, edge_threshold=args.edge_threshold)
    await run_propagation(mesh, rig, generator, Path(args.output_dir), args.prompt, cfg,
                          args.smooth_normals, make_hooks(args.delight_cmd, args.upscale_cmd, logger),
                          report, logger)


async def cmd_bake(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    cfg = BakeConfig(atlas_res=args.atlas_res, alpha_deg=args.alpha, dilate_radius=args.dilate,
                     cosine_weighting=not args.binary_weighting, depth_tol=args.depth_tol,
                     edge_threshold=args.edge_threshold, auto_uv=args.auto_uv)
    mesh = prepare_uvs(load_mesh(args.mesh, logger), cfg.atlas_res, cfg.auto_uv, logger)
    views = load_views(Path(args.views), mesh)
    with report.stage("bake"):
        atlas = bake_views(mesh, views, cfg, logger)
    write_textured(Path(args.output_dir), mesh, atlas, parse_materials(args.material), report)


async def cmd_eval(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    if len(args.pred) != len(args.gt):
        raise InvalidInput(f"{len(args.pred)} predicted clouds but {len(args.gt)} ground-truth clouds")
    preds = [read_point_cloud(p) for p in args.pred]
    gts = [read_point_cloud(p) for p in args.gt]
    metrics = scene_metrics(preds, gts, args.tau)
    report.add_metrics(metrics)
    logger.info(f"[eval] CD object={metrics['cd_object']:.6g} scene={metrics['cd_scene']:.6g}; "
                f"F-score object={metrics['fscore_object']:.2f} scene={metrics['fscore_scene']:.2f} "
                f"(tau={args.tau})")


async def cmd_pipeline(args, seed: int, report: RunReport, logger: logging.Logger) -> None:
    manifest = PipelineManifest.load(args.config)
    out = manifest.output_dir
    report.output_dir = out
    report.data["seed"] = manifest.seed
    out.mkdir(parents=True, exist_ok=True)

    if manifest.scene is not None:
        s = manifest.scene
        cfg = replace(s.optim, seed=manifest.seed)
        cam = read_camera(s.camera)
        depth = load_depth(s.depth)
        image = read_image(s.image) if s.image else None
        masks = [InstanceMask(read_mask(inst.mask), instance_id=inst.id, label=inst.label)
                 for inst in s.instances]
        with report.stage("extract"):
            _, clouds = extract_clouds(cam, depth, image, masks, report, logger)
        instances, names = [], []
        for inst in s.instances:
            if inst.tag not in clouds:
                continue
            source, mesh = source_cloud(inst.mesh, cfg.max_points, manifest.seed, logger)
            with report.stage(f"optimize:{inst.tag}"):
                pose = optimize_instance(inst.tag, source, clouds[inst.tag], cam, cfg, report, logger)
            if pose is None:
                continue
            instances.append((mesh if mesh is not None else load_mesh(inst.mesh, logger), pose))
            names.append(inst.tag)

        if s.background_depth is not None:
            bg_depth = load_depth(s.background_depth)
        else:
            bg_depth = mask_out_foreground(depth, masks)
        bg_image = read_image(s.background_image) if s.background_image else image
        with report.stage("background"):
            bg_mesh, bg_cloud = reconstruct_background(cam, bg_depth, bg_image, s.planes, manifest.seed, logger)
            bg_pose = optimize_background(bg_mesh, bg_cloud, cam, cfg, report, logger)
        graph = assemble_scene(instances, (bg_mesh, bg_pose), names=names)
        export_scene(graph, out / "scene.glb")
        report.add_output(out / "scene.glb")
        write_json(out / "poses.json", {n.name: n.pose.to_dict() for n in graph.nodes}, report)

    if manifest.texture is not None:
        t = manifest.texture
        mesh = prepare_uvs(load_mesh(t.mesh, logger), t.bake.atlas_res, t.bake.auto_uv, logger)
        rig = rig_for_mesh(mesh, t.rig)
        generator = make_generator(t.generator_command, t.oracle_mesh, logger)
        views = await run_propagation(mesh, rig, generator, out, t.prompt, t.bake, t.rig.smooth_normals,
                                      make_hooks(t.delight_cmd, t.upscale_cmd, logger), report, logger)
        with report.stage("bake"):
            atlas = bake_views(mesh, views, t.bake, logger)
        write_textured(out, mesh, atlas, t.materials, report)


HANDLERS = {
    "extract": cmd_extract, "optimize": cmd_optimize, "assemble": cmd_assemble,
    "background": cmd_background, "condition": cmd_condition, "propagate": cmd_propagate,
    "bake": cmd_bake, "eval": cmd_eval, "pipeline": cmd_pipeline,
}


# ---------------------------
# Argument parsing
# ---------------------------

def _add_optim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument('--optim-config', type=str, help='JSON file with optimizer settings')
    p.add_argument('--epochs', type=int, help='Epochs (default: 20)')
    p.add_argument('--iters', type=int, help='Iterations per epoch (default: 2000); warmup scales along')
    p.add_argument('--lr', type=float, help='Adam learning rate (default: 0.01)')
    p.add_argument('--lambda1', type=float, help='3D Chamfer weight (default: 1)')
    p.add_argument('--lambda2', type=float, help='2D Chamfer weight (default: 0.05)')
    p.add_argument('--max-points', type=int, help='Points per cloud after subsampling (default: 4096)')
    p.add_argument('--loss-mode', choices=LOSS_MODES, help='Loss terms to use (default: joint)')


def _add_rig_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument('--radius', type=float, help='Camera distance (default: fit the mesh)')
    p.add_argument('--resolution', type=int, default=768, help='View resolution (default: 768)')
    p.add_argument('--fov', type=float, default=45.0, help='Horizontal field of view in degrees')
    p.add_argument('--smooth-normals', action='store_true', help='Interpolate vertex normals')
    p.add_argument('--edge-threshold', type=float, default=DEFAULT_EDGE_THRESHOLD,
                   help='Relative depth-gradient threshold for edges (default: 0.05)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='scenekit',
        description='Scene assembly and multi-view texture baking toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='Random seed (default: SCENEKIT_SEED or 0)')
    common.add_argument('--log-dir', type=str, help='Log directory (default: SCENEKIT_LOG_DIR or logs)')
    common.add_argument('--output-dir', type=str, default='out', help='Output directory (default: out)')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('extract', parents=[common], help='Depth + camera + masks to scene/instance PLYs')
    p.add_argument('--camera', required=True)
    p.add_argument('--depth', required=True, help='PFM depth map')
    p.add_argument('--image', help='Color image')
    p.add_argument('--mask', action='append', help='ID:LABEL:PATH of an instance mask (repeatable)')
    p.add_argument('--outlier-k', type=int, default=16)
    p.add_argument('--outlier-std', type=float, default=2.0)
    p.add_argument('--no-clean', action='store_true', help='Skip outlier removal and normals')

    p = sub.add_parser('optimize', parents=[common], help='Fit instance poses')
    p.add_argument('--camera', required=True)
    p.add_argument('--instance', nargs=3, action='append', required=True,
                   metavar=('NAME', 'TARGET_PLY', 'SOURCE'),
                   help='Instance name, target cloud, source mesh or cloud (repeatable)')
    _add_optim_flags(p)

    p = sub.add_parser('assemble', parents=[common], help='Poses + meshes to a glTF scene')
    p.add_argument('--poses', required=True)
    p.add_argument('--mesh', nargs=2, action='append', default=[], metavar=('NAME', 'PATH'))
    p.add_argument('--background', help='Background mesh')
    p.add_argument('--output', required=True, help='Scene file (.glb, .gltf or .obj)')

    p = sub.add_parser('background', parents=[common], help='Background depth to plane meshes + pose')
    p.add_argument('--camera', required=True)
    p.add_argument('--depth', required=True)
    p.add_argument('--image')
    p.add_argument('--mask', action='append', help='Foreground mask ID:LABEL:PATH to exclude')
    p.add_argument('--max-planes', type=int, default=6)
    p.add_argument('--inlier-tol', type=float, default=0.01)
    p.add_argument('--min-inlier-ratio', type=float, default=0.05)
    p.add_argument('--grid', type=int, default=64, help='Grid resolution per plane')
    _add_optim_flags(p)

    p = sub.add_parser('condition', parents=[common], help='Mesh + rig to condition maps')
    p.add_argument('--mesh', required=True)
    _add_rig_flags(p)

    p = sub.add_parser('propagate', parents=[common], help='Mesh + rig + generator to view images')
    p.add_argument('--mesh', required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument('--generator-cmd', help='Command run per packet ({packet_dir}, {index})')
    group.add_argument('--oracle-mesh', help='Textured mesh rendered in-process as the generator')
    p.add_argument('--prompt', default='')
    p.add_argument('--depth-tol', type=float, default=1e-3)
    p.add_argument('--delight-cmd', help='Per-image delighting command ({input}, {output})')
    p.add_argument('--upscale-cmd', help='Per-image super-resolution command ({input}, {output})')
    _add_rig_flags(p)

    p = sub.add_parser('bake', parents=[common], help='Mesh + views to a texture atlas')
    p.add_argument('--mesh', required=True)
    p.add_argument('--views', required=True, help='views.json written by propagate')
    p.add_argument('--atlas-res', type=int, default=2048)
    p.add_argument('--alpha', type=float, default=60.0, help='View-angle threshold in degrees')
    p.add_argument('--dilate', type=int, default=4)
    p.add_argument('--binary-weighting', action='store_true', help='Use w_i instead of w_i * cos')
    p.add_argument('--depth-tol', type=float, default=1e-3)
    p.add_argument('--edge-threshold', type=float, default=DEFAULT_EDGE_THRESHOLD)
    p.add_argument('--auto-uv', action='store_true', help='Pack per-triangle charts when UVs are missing')
    p.add_argument('--material', action='append', help='name=path for metallic, roughness or bump')

    p = sub.add_parser('eval', parents=[common], help='Chamfer distance and F-score')
    p.add_argument('--pred', nargs='+', required=True)
    p.add_argument('--gt', nargs='+', required=True)
    p.add_argument('--tau', type=float, default=DEFAULT_TAU)

    p = sub.add_parser('pipeline', parents=[common], help='Manifest-driven end-to-end run')
    p.add_argument('--config', required=True, help='Pipeline manifest (JSON)')
    return parser


async def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = setup_logger(args.command, args.log_dir)
    seed = args.seed if args.seed is not None else default_seed()
    report = RunReport(args.command, vars(args), seed, logger)
    report.output_dir = Path(args.output_dir)
    report.log_dir = args.log_dir

    error = None
    try:
        await HANDLERS[args.command](args, seed, report, logger)
        exit_code = 0
    except NonFiniteLoss as e:
        logger.error(f"[{args.command}] numerical abort: {e}")
        report.add_metrics({"diagnostics": e.diagnostics})
        exit_code, error = e.exit_code, str(e)
    except SceneKitError as e:
        logger.error(f"[{args.command}] {type(e).__name__}: {e}")
        exit_code, error = e.exit_code, str(e)
    except KeyboardInterrupt:
        logger.warning(f"[{args.command}] interrupted")
        exit_code, error = 130, "interrupted"
    except Exception as e:
        logger.error(f"[{args.command}] unexpected error: {e}\n{traceback.format_exc()}")
        exit_code, error = 1, str(e)

    report.finish(exit_code, error)
    path = report.write(report.output_dir)
    logger.info(f"[{args.command}] finished with exit code {exit_code}; report at {path}")
    return exit_code
