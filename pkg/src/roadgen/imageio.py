"""8-bit raster I/O through Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 image, got {arr.dtype}")
    Image.fromarray(arr).save(Path(path), format="PNG")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 127


def write_mask(path, mask) -> None:
    bits = np.asarray(mask, dtype=bool)
    Image.fromarray(bits.astype(np.uint8) * 255).save(Path(path), format="PNG")
