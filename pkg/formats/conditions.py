"""Condition tensors on disk: seven 8-bit grayscale PNGs plus a JSON manifest."""

import json
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from PIL import Image

from geometry.errors import InvalidInput
from rendering.conditioning import CHANNELS, ConditionTensor

from .images import read_mask, write_image

PathLike = Union[str, Path]
MANIFEST_NAME = "condition.json"


def write_condition(directory: PathLike, tensor: ConditionTensor) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, Any] = tensor.to_manifest()
    files = []
    for k, name in enumerate(CHANNELS):
        filename = f"{name}.png"
        write_image(directory / filename, tensor.data[..., k])
        files.append(filename)
    manifest["files"] = files
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return path


def read_condition(directory: PathLike) -> ConditionTensor:
    """Reload a condition tensor; values come back quantized to 8 bits."""
    directory = Path(directory)
    try:
        with open(directory / MANIFEST_NAME, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInput(f"cannot read condition manifest in {directory}: {e}") from e
    channels = []
    for filename in manifest["files"]:
        with Image.open(directory / filename) as img:
            channels.append(np.asarray(img.convert("L"), dtype=np.float64) / 255.0)
    data = np.stack(channels, axis=-1)
    data[..., 6] = read_mask(directory / manifest["files"][6])
    bounds = (np.asarray(manifest["bounds_min"]), np.asarray(manifest["bounds_max"]))
    return ConditionTensor(data=data, bounds=bounds)
