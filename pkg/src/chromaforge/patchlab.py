"""Patch extraction, Lab conversion and patch admission filters.

Admission mirrors the training-data heuristics: a patch is kept if it is not
constant, at most ``N_hi`` channels are saturated (more than ``delta_hi``
pixels above ``rho_hi``), at most ``N_lo`` channels are dark (more than
``delta_lo`` pixels below ``rho_lo``), and its mean per-pixel Lab distance to
every co-located peer from another pipeline is at least ``delta_lab``.

Lab values are rescaled to [0, 255] per channel: ``L * 255 / 100``, ``a + 128``,
``b + 128`` (CIE L*a*b*, sRGB input, D65 white).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATCH_SIZE = 128


@dataclass
class Patch:
    pixels: np.ndarray  # PATCH_SIZE x PATCH_SIZE x 3 uint8
    center: tuple[int, int] = (PATCH_SIZE // 2, PATCH_SIZE // 2)
    scene_id: str | None = None
    pipeline_id: str | None = None

    def __post_init__(self):
        if self.pixels.shape != (PATCH_SIZE, PATCH_SIZE, 3):
            raise ValueError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}x3, got {self.pixels.shape}")

    @property
    def top_left(self) -> tuple[int, int]:
        return self.center[0] - PATCH_SIZE // 2, self.center[1] - PATCH_SIZE // 2


@dataclass(frozen=True)
class FilterParams:
    rho_hi: int = 252
    rho_lo: int = 5
    delta_hi: float = 0.3 * PATCH_SIZE * PATCH_SIZE
    delta_lo: float = 0.3 * PATCH_SIZE * PATCH_SIZE
    n_hi: int = 2
    n_lo: int = 3
    delta_lab: float = 5.0

    def __post_init__(self):
        for name in ("rho_hi", "rho_lo", "delta_hi", "delta_lo", "n_hi", "n_lo", "delta_lab"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _pixels(p) -> np.ndarray:
    return p.pixels if isinstance(p, Patch) else np.asarray(p)


def patch_origins(height: int, width: int, stride: int, size: int = PATCH_SIZE):
    rows = range(0, height - size + 1, stride) if height >= size else range(0)
    cols = range(0, width - size + 1, stride) if width >= size else range(0)
    return list(rows), list(cols)


def extract_patches(image, stride: int = 32, *, scene_id=None, pipeline_id=None) -> list[Patch]:
    """All fully contained 128x128 patches on a ``stride`` grid, raster order."""
    if stride < 1:
        raise ValueError("stride must be positive")
    img = np.asarray(image)
    rows, cols = patch_origins(img.shape[0], img.shape[1], stride)
    half = PATCH_SIZE // 2
    return [
        Patch(img[r:r + PATCH_SIZE, c:c + PATCH_SIZE].copy(), (r + half, c + half), scene_id, pipeline_id)
        for r in rows for c in cols
    ]


def crop(image, top: int, left: int, *, scene_id=None, pipeline_id=None) -> Patch:
    img = np.asarray(image)
    half = PATCH_SIZE // 2
    return Patch(img[top:top + PATCH_SIZE, left:left + PATCH_SIZE].copy(), (top + half, left + half),
                 scene_id, pipeline_id)


def _channels_tripped(mask: np.ndarray, delta: float) -> int:
    return int(np.count_nonzero(mask.reshape(-1, 3).sum(axis=0) > delta))


def is_overexposed(patch, params: FilterParams = FilterParams()) -> bool:
    return _channels_tripped(_pixels(patch) > params.rho_hi, params.delta_hi) > params.n_hi


def is_underexposed(patch, params: FilterParams = FilterParams()) -> bool:
    return _channels_tripped(_pixels(patch) < params.rho_lo, params.delta_lo) > params.n_lo


def has_color_variation(patch) -> bool:
    px = _pixels(patch)
    return bool(px.min() != px.max())


# sRGB decoding table for 8-bit codes.
_codes = np.arange(256) / 255.0
_SRGB_TO_LINEAR = np.where(_codes <= 0.04045, _codes / 12.92, ((_codes + 0.055) / 1.055) ** 2.4)
_RGB_TO_XYZ = np.array([[0.4124564, 0.3575761, 0.1804375],
                        [0.2126729, 0.7151522, 0.0721750],
                        [0.0193339, 0.1191920, 0.9503041]])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_EPS = (6.0 / 29.0) ** 3


def rgb_to_lab(patch, rescale: bool = True) -> np.ndarray:
    """sRGB uint8 raster (or Patch) to Lab. With ``rescale`` every channel spans [0, 255]."""
    px = _pixels(patch)
    if px.dtype == np.uint8:
        lin = _SRGB_TO_LINEAR[px]
    else:
        c = np.clip(np.asarray(px, dtype=np.float64) / 255.0, 0, 1)
        lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = (lin @ _RGB_TO_XYZ.T) / D65_WHITE
    f = np.where(xyz > _EPS, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    if rescale:
        lab[..., 0] *= 255.0 / 100.0
        lab[..., 1:] += 128.0
        np.clip(lab, 0.0, 255.0, out=lab)
    return lab


def mean_lab_distance(lab0: np.ndarray, lab1: np.ndarray) -> float:
    """Mean over pixels of the Euclidean norm of the Lab difference."""
    lab0, lab1 = np.asarray(lab0, dtype=np.float64), np.asarray(lab1, dtype=np.float64)
    if lab0.shape != lab1.shape:
        raise ValueError(f"shape mismatch: {lab0.shape} vs {lab1.shape}")
    return float(np.sqrt(((lab0 - lab1) ** 2).sum(axis=-1)).mean())


def lab_distance(p0, p1) -> float:
    a, b = _pixels(p0), _pixels(p1)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return mean_lab_distance(rgb_to_lab(a), rgb_to_lab(b))


def passes_exposure(patch, params: FilterParams = FilterParams()) -> bool:
    return has_color_variation(patch) and not is_overexposed(patch, params) and not is_underexposed(patch, params)


def admit(p0, peers, params: FilterParams = FilterParams(), *, lab0=None, peer_labs=None) -> bool:
    """Combined admission test; precomputed Lab rasters may be passed to skip conversion."""
    if not passes_exposure(p0, params):
        return False
    if not peers and not peer_labs:
        return True
    if lab0 is None:
        lab0 = rgb_to_lab(p0)
    if peer_labs is None:
        peer_labs = [rgb_to_lab(p) for p in peers]
    return all(mean_lab_distance(lab0, lab1) >= params.delta_lab for lab1 in peer_labs)


# ---------------------------------------------------------------- grid versions

def window_sums(values: np.ndarray, stride: int, size: int = PATCH_SIZE) -> np.ndarray:
    """Sums of ``values`` (H x W) over every ``size`` window on the ``stride`` grid."""
    h, w = values.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(values, axis=0, dtype=np.float64), axis=1)
    rows, cols = patch_origins(h, w, stride, size)
    r0, c0 = np.array(rows)[:, None], np.array(cols)[None, :]
    return integral[r0 + size, c0 + size] - integral[r0, c0 + size] - integral[r0 + size, c0] + integral[r0, c0]


def lab_distance_grid(lab0: np.ndarray, lab1: np.ndarray, stride: int) -> np.ndarray:
    per_pixel = np.sqrt(((lab0 - lab1) ** 2).sum(axis=-1))
    return window_sums(per_pixel, stride) / (PATCH_SIZE * PATCH_SIZE)


def exposure_grid(images, params: FilterParams = FilterParams(), stride: int = 32) -> np.ndarray:
    """Boolean (n_images, rows, cols): exposure and variation filters for every grid patch."""
    out = []
    for img in images:
        img = np.asarray(img)
        hi = np.stack([window_sums((img[..., k] > params.rho_hi).astype(np.float64), stride) for k in range(3)])
        lo = np.stack([window_sums((img[..., k] < params.rho_lo).astype(np.float64), stride) for k in range(3)])
        over = (hi > params.delta_hi).sum(axis=0) > params.n_hi
        under = (lo > params.delta_lo).sum(axis=0) > params.n_lo
        rows, cols = patch_origins(img.shape[0], img.shape[1], stride)
        varied = np.array([[img[r:r + PATCH_SIZE, c:c + PATCH_SIZE].min() != img[r:r + PATCH_SIZE, c:c + PATCH_SIZE].max()
                            for c in cols] for r in rows], dtype=bool).reshape(len(rows), len(cols))
        out.append(varied & ~over & ~under)
    return np.stack(out)
