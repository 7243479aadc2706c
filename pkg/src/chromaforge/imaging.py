"""Small raster utilities shared across modules: resizing, JPEG round trips, PNG I/O."""
from __future__ import annotations

import io
from pathlib import Path

import cv2
import numpy as np
from PIL import Image


def as_uint8_rgb(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 raster, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return arr


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize that returns the input untouched when the size already matches."""
    if image.shape[0] == height and image.shape[1] == width:
        return image.copy()
    return cv2.resize(image, (int(width), int(height)), interpolation=cv2.INTER_LINEAR)


def scaled_dims(height: int, width: int, factor: float) -> tuple[int, int]:
    return max(1, int(round(height * factor))), max(1, int(round(width * factor)))


def dims_for_larger(height: int, width: int, larger: int) -> tuple[int, int]:
    factor = larger / max(height, width)
    return scaled_dims(height, width, factor)


def resize_to_larger_dim(image: np.ndarray, larger: int | None) -> np.ndarray:
    """Aspect-preserving resize so that max(H, W) == larger. ``None`` is a pass-through."""
    if larger is None:
        return image
    h, w = dims_for_larger(image.shape[0], image.shape[1], larger)
    return resize_bilinear(image, h, w)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode to baseline JPEG at ``quality`` and decode again (libjpeg via Pillow).

    Chroma is kept at full resolution (4:4:4) so that quality alone sets the loss.
    """
    buf = io.BytesIO()
    Image.fromarray(as_uint8_rgb(image)).save(buf, format="JPEG", quality=int(quality), subsampling=0)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB")).copy()


def write_png(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB")).copy()


def read_image(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("RGB")).copy()
