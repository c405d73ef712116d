"""
Image codecs: 8-bit PNG color images and masks through Pillow, float PFM maps.

Color images are float arrays (H, W, 3) in [0, 1]; masks are boolean (H, W).
"""

import re
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from geometry.errors import InvalidInput

PathLike = Union[str, Path]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise InvalidInput(f"Cannot read image {path}: {e}") from e
    return data / 255.0


def write_image(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if not (image.ndim == 2 or (image.ndim == 3 and image.shape[2] == 3)):
        raise InvalidInput(f"Cannot write image of shape {image.shape}")
    Image.fromarray(to_uint8(image)).save(path)


def read_mask(path: PathLike) -> np.ndarray:
    """8-bit mask, set where the gray value is >= 128."""
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("L"))
    except (OSError, ValueError) as e:
        raise InvalidInput(f"Cannot read mask {path}: {e}") from e
    return data >= 128


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def read_pfm(path: PathLike) -> np.ndarray:
    """PFM map, returned top row first as float64 (H, W) or (H, W, 3)."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise InvalidInput(f"Cannot read PFM {path}: {e}") from e
    with f:
        header = f.readline().decode("latin-1").strip()
        if header not in ("Pf", "PF"):
            raise InvalidInput(f"{path} is not a PFM file (header {header!r})")
        dims = f.readline().decode("latin-1")
        match = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not match:
            raise InvalidInput(f"{path}: malformed PFM dimensions {dims!r}")
        width, height = int(match.group(1)), int(match.group(2))
        scale_line = f.readline().decode("latin-1").strip()
        try:
            scale = float(scale_line)
        except ValueError:
            scale = 0.0
        if scale == 0.0 or not np.isfinite(scale):
            raise InvalidInput(f"{path}: malformed PFM scale {scale_line!r}")
        dtype = "<f4" if scale < 0 else ">f4"
        channels = 3 if header == "PF" else 1
        raw = f.read()
    expected = width * height * channels
    if len(raw) != 4 * expected:
        raise InvalidInput(f"{path}: expected {expected} floats, found {len(raw) / 4:g}")
    data = np.frombuffer(raw, dtype=dtype)
    shape = (height, width, 3) if channels == 3 else (height, width)
    # rows are stored bottom to top
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path: PathLike, data: np.ndarray) -> None:
    """Little-endian PFM; (H, W) writes `Pf`, (H, W, 3) writes `PF`."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise InvalidInput(f"Cannot write PFM of shape {data.shape}")
    height, width = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{width} {height}\n-1.0\n".encode("latin-1"))
        f.write(np.flipud(data).astype("<f4").tobytes())
