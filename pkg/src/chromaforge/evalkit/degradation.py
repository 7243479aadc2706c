"""Resize / JPEG degradations used by the robustness grid and the HQ/MQ/LQ benchmark variants."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import imaging

RESIZE_FACTORS = (1.25, 1.0, 0.75, 0.5, 0.25)
JPEG_QUALITIES = (None, 90, 70, 50, 30)  # None: no compression


@dataclass(frozen=True)
class DegradationSpec:
    """Either a resize factor or a target larger dimension, followed by optional JPEG."""
    resize_factor: float | None = 1.0
    jpeg_quality: int | None = None
    larger_dim: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.resize_factor is not None and self.resize_factor <= 0:
            raise ValueError("resize factor must be positive")
        if self.larger_dim is not None and self.larger_dim < 1:
            raise ValueError("larger_dim must be positive")
        if self.resize_factor is not None and self.larger_dim is not None:
            raise ValueError("give either resize_factor or larger_dim, not both")
        if self.jpeg_quality is not None and not 1 <= self.jpeg_quality <= 100:
            raise ValueError("JPEG quality must lie in [1, 100]")

    @property
    def is_identity(self) -> bool:
        return self.larger_dim is None and self.resize_factor in (None, 1.0) and self.jpeg_quality is None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        size = f"L{self.larger_dim}" if self.larger_dim is not None else f"f{self.resize_factor:g}"
        return f"{size}_q{self.jpeg_quality if self.jpeg_quality is not None else 'id'}"


VARIANTS = {
    "hq": DegradationSpec(name="HQ"),
    "mq": DegradationSpec(resize_factor=None, larger_dim=1200, jpeg_quality=75, name="MQ"),
    "lq": DegradationSpec(resize_factor=None, larger_dim=800, jpeg_quality=50, name="LQ"),
}


def variant(name: str) -> DegradationSpec:
    try:
        return VARIANTS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}") from None


def degrade(image, spec: DegradationSpec) -> np.ndarray:
    """Bilinear resize, then a JPEG encode/decode round trip unless ``jpeg_quality`` is None."""
    img = imaging.as_uint8_rgb(image)
    if spec.larger_dim is not None:
        img = imaging.resize_to_larger_dim(img, spec.larger_dim)
    elif spec.resize_factor not in (None, 1.0):
        img = imaging.resize_bilinear(img, *imaging.scaled_dims(img.shape[0], img.shape[1], spec.resize_factor))
    else:
        img = img.copy()
    if spec.jpeg_quality is not None:
        img = imaging.jpeg_roundtrip(img, spec.jpeg_quality)
    return img
