"""Camera JSON: fx, fy, cx, cy, width, height, world_from_camera (16 numbers, row-major)."""

import json
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

from geometry.core import PinholeCamera
from geometry.errors import InvalidInput

PathLike = Union[str, Path]

CAMERA_KEYS = ("fx", "fy", "cx", "cy", "width", "height", "world_from_camera")


def camera_from_dict(data: Mapping[str, Any]) -> PinholeCamera:
    missing = [k for k in CAMERA_KEYS if k not in data]
    if missing:
        raise InvalidInput(f"camera JSON is missing keys {missing}")
    pose = np.asarray(data["world_from_camera"], dtype=np.float64)
    if pose.size != 16:
        raise InvalidInput(f"world_from_camera needs 16 numbers, got {pose.size}")
    return PinholeCamera(fx=data["fx"], fy=data["fy"], cx=data["cx"], cy=data["cy"],
                         width=data["width"], height=data["height"],
                         world_from_camera=pose.reshape(4, 4))


def read_camera(path: PathLike) -> PinholeCamera:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidInput(f"cannot read camera {path}: {e}") from e
    return camera_from_dict(data)


def write_camera(path: PathLike, cam: PinholeCamera) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cam.to_dict(), f, indent=2)
