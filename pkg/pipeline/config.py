"""
Run configuration: environment settings and the JSON pipeline manifest.

Relative paths in a manifest resolve against the manifest's directory.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from extraction.planes import (DEFAULT_INLIER_TOL, DEFAULT_ITERATIONS, DEFAULT_MAX_PLANES,
                               DEFAULT_MIN_INLIER_RATIO, DEFAULT_RESOLUTION)
from geometry.errors import InvalidInput
from layout.optimizer import OptimConfig
from rendering.rig import RigConfig
from texturing.baking import BakeConfig

MANIFEST_VERSION = "1"


def default_seed() -> int:
    return int(os.getenv('SCENEKIT_SEED', 0))


def _reject_unknown(section: str, data: Mapping[str, Any], allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise InvalidInput(f"Unknown keys in manifest section {section!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class PlaneConfig:
    max_planes: int = DEFAULT_MAX_PLANES
    inlier_tol: float = DEFAULT_INLIER_TOL
    min_inlier_ratio: float = DEFAULT_MIN_INLIER_RATIO
    resolution: int = DEFAULT_RESOLUTION
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        if self.max_planes < 0 or self.inlier_tol <= 0 or not 0 < self.min_inlier_ratio <= 1:
            raise InvalidInput("invalid plane config")
        if self.resolution < 2 or self.iterations < 1:
            raise InvalidInput("plane resolution must be >= 2 and iterations >= 1")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "PlaneConfig":
        _reject_unknown("planes", data, {f.name for f in fields(cls)})
        return cls(**dict(data))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class InstanceSpec:
    id: int
    label: str
    mask: Path
    mesh: Path

    @property
    def tag(self) -> str:
        return f"{self.label}#{self.id}"


@dataclass
class SceneSection:
    camera: Path
    depth: Path
    instances: List[InstanceSpec]
    image: Optional[Path] = None
    background_depth: Optional[Path] = None
    background_image: Optional[Path] = None
    optim: OptimConfig = field(default_factory=OptimConfig)
    planes: PlaneConfig = field(default_factory=PlaneConfig)


@dataclass
class TextureSection:
    mesh: Path
    rig: RigConfig = field(default_factory=RigConfig)
    bake: BakeConfig = field(default_factory=BakeConfig)
    generator_command: Optional[str] = None
    oracle_mesh: Optional[Path] = None
    prompt: str = ""
    delight_cmd: Optional[str] = None
    upscale_cmd: Optional[str] = None
    materials: Dict[str, Path] = field(default_factory=dict)


@dataclass
class PipelineManifest:
    version: str
    output_dir: Path
    seed: int
    scene: Optional[SceneSection] = None
    texture: Optional[TextureSection] = None
    source: Optional[Path] = None

    @classmethod
    def load(cls, path) -> "PipelineManifest":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidInput(f"cannot read manifest {path}: {e}") from e
        manifest = cls.from_mapping(data, base_dir=path.parent)
        manifest.source = path
        manifest.validate()
        return manifest

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: Path) -> "PipelineManifest":
        if not isinstance(data, Mapping):
            raise InvalidInput("manifest must be a JSON object")
        _reject_unknown("manifest", data, {"version", "output_dir", "seed", "scene", "texture"})
        version = str(data.get("version", ""))
        if version != MANIFEST_VERSION:
            raise InvalidInput(f"unsupported manifest version {version!r}, expected {MANIFEST_VERSION!r}")
        if "scene" not in data and "texture" not in data:
            raise InvalidInput("manifest needs a 'scene' or a 'texture' section")

        def resolve(value: Optional[str]) -> Optional[Path]:
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        scene = texture = None
        if "scene" in data:
            s = data["scene"]
            _reject_unknown("scene", s, {"camera", "depth", "image", "instances", "background_depth",
                                         "background_image", "optim", "planes"})
            instances = []
            for item in s.get("instances", []):
                _reject_unknown("scene.instances", item, {"id", "label", "mask", "mesh"})
                try:
                    instances.append(InstanceSpec(id=int(item["id"]), label=str(item.get("label", "instance")),
                                                  mask=resolve(item["mask"]), mesh=resolve(item["mesh"])))
                except KeyError as e:
                    raise InvalidInput(f"scene instance is missing key {e}") from e
            try:
                scene = SceneSection(camera=resolve(s["camera"]), depth=resolve(s["depth"]),
                                     instances=instances, image=resolve(s.get("image")),
                                     background_depth=resolve(s.get("background_depth")),
                                     background_image=resolve(s.get("background_image")),
                                     optim=OptimConfig.from_mapping(s.get("optim", {})),
                                     planes=PlaneConfig.from_mapping(s.get("planes", {})))
            except KeyError as e:
                raise InvalidInput(f"scene section is missing key {e}") from e

        if "texture" in data:
            t = data["texture"]
            _reject_unknown("texture", t, {"mesh", "rig", "generator", "prompt", "bake", "delight_cmd",
                                           "upscale_cmd", "materials"})
            generator = t.get("generator", {})
            _reject_unknown("texture.generator", generator, {"command", "oracle_mesh"})
            if ("command" in generator) == ("oracle_mesh" in generator):
                raise InvalidInput("texture.generator needs exactly one of 'command' or 'oracle_mesh'")
            if "mesh" not in t:
                raise InvalidInput("texture section is missing key 'mesh'")
            texture = TextureSection(mesh=resolve(t["mesh"]),
                                     rig=RigConfig.from_mapping(t.get("rig", {})),
                                     bake=BakeConfig.from_mapping(t.get("bake", {})),
                                     generator_command=generator.get("command"),
                                     oracle_mesh=resolve(generator.get("oracle_mesh")),
                                     prompt=str(t.get("prompt", "")),
                                     delight_cmd=t.get("delight_cmd"), upscale_cmd=t.get("upscale_cmd"),
                                     materials={k: resolve(v) for k, v in t.get("materials", {}).items()})

        seed = data.get("seed")
        return cls(version=version, output_dir=resolve(data.get("output_dir", "out")),
                   seed=default_seed() if seed is None else int(seed), scene=scene, texture=texture)

    def referenced_files(self) -> List[Path]:
        files: List[Path] = []
        if self.scene is not None:
            s = self.scene
            files += [s.camera, s.depth]
            files += [p for p in (s.image, s.background_depth, s.background_image) if p is not None]
            for inst in s.instances:
                files += [inst.mask, inst.mesh]
        if self.texture is not None:
            t = self.texture
            files.append(t.mesh)
            if t.oracle_mesh is not None:
                files.append(t.oracle_mesh)
            files += list(t.materials.values())
        return files

    def validate(self) -> None:
        missing = [str(p) for p in self.referenced_files() if not p.exists()]
        if missing:
            raise InvalidInput(f"manifest references missing files: {missing}")
