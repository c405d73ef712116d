"""
Baked atlas output: 8-bit albedo PNG, float PFM, mask sidecars for baked and
dilated texels and a manifest listing the PBR material slots.
"""

import json
import shutil
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

from geometry.errors import InvalidInput
from texturing.baking import TexelAtlas

from .images import write_image, write_mask, write_pfm

PathLike = Union[str, Path]
MATERIAL_SLOTS = ("metallic", "roughness", "bump")


def save_atlas(directory: PathLike, atlas: TexelAtlas,
               materials: Optional[Mapping[str, PathLike]] = None) -> Dict[str, str]:
    """Write the atlas files; supplied material maps are copied through unchanged."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    color = atlas.color
    files = {"albedo_png": "albedo.png", "albedo_pfm": "albedo.pfm", "valid_mask": "albedo_valid.png",
             "dilated_mask": "albedo_dilated.png"}
    write_image(directory / files["albedo_png"], color)
    write_pfm(directory / files["albedo_pfm"], color)
    # texels with baked color only; gutter fill goes to its own mask
    write_mask(directory / files["valid_mask"], atlas.valid & ~atlas.dilated)
    write_mask(directory / files["dilated_mask"], atlas.dilated)

    slots: Dict[str, Optional[str]] = {name: None for name in MATERIAL_SLOTS}
    for name, source in (materials or {}).items():
        if name not in slots:
            raise InvalidInput(f"unknown material slot {name!r}; expected one of {MATERIAL_SLOTS}")
        source = Path(source)
        if not source.exists():
            raise InvalidInput(f"material map not found: {source}")
        target = f"{name}{source.suffix}"
        shutil.copyfile(source, directory / target)
        slots[name] = target

    manifest = {"files": files, "materials": slots, **atlas.stats()}
    with open(directory / "atlas.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return {k: str(directory / v) for k, v in files.items()}
