"""Synthetic linear scenes and parametric camera colour pipelines.

A ``LinearScene`` stands in for a RAW capture: per-pixel linear RGB equal to
illuminant x reflectance x shading, already integrated against the camera
sensitivities (the spectral integral collapses to three channels here).
``develop`` applies a spatially invariant pipeline to it:

    gains (camera preset x white-balance mode) -> 3x3 matrix -> clip -> gamma -> 8 bit
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import imaging

logger = logging.getLogger(__name__)

MIN_SCENE_SIZE = 256

WB_MODES = ("autoWB", "cameraWB", "noWB")
TRANSFORMS = ("raw", "sRGB", "Adobe", "ProPhoto")

GAIN_RANGE = (0.6, 1.6)
# Weight of the reference matrix in the identity/reference convex blend.
BLEND_RANGE = (0.5, 1.0)

# Camera-RGB -> output-space reference matrices. Rows of the three
# rendered spaces sum to 1 so that neutral stays neutral; "raw" keeps the
# sensor's own cross-talk and is not white preserving.
REFERENCE_MATRICES = {
    "raw": np.array([[0.92, 0.10, 0.02],
                     [0.06, 1.00, 0.08],
                     [0.01, 0.12, 0.85]]),
    "sRGB": np.array([[1.70, -0.55, -0.15],
                      [-0.22, 1.52, -0.30],
                      [0.02, -0.58, 1.56]]),
    "Adobe": np.array([[1.32, -0.26, -0.06],
                       [-0.16, 1.34, -0.18],
                       [0.00, -0.36, 1.36]]),
    "ProPhoto": np.array([[0.82, 0.14, 0.04],
                          [0.08, 0.84, 0.08],
                          [0.04, 0.16, 0.80]]),
}
TONE_GAMMAS = {"raw": 2.222, "sRGB": 2.4, "Adobe": 2.2, "ProPhoto": 1.8}


@dataclass
class LinearScene:
    scene_id: str
    pixels: np.ndarray  # H x W x 3, float32, linear light, >= 0
    rng_seed: int
    illuminant: np.ndarray = field(default_factory=lambda: np.ones(3))  # global tint, green == 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class PipelineSpec:
    wb_mode: str
    color_transform: str
    wb_gains: tuple[float, float, float]
    color_matrix: tuple[tuple[float, float, float], ...]
    tone_gamma: float

    def __post_init__(self):
        if self.wb_mode not in WB_MODES:
            raise ValueError(f"unknown white-balance mode {self.wb_mode!r}")
        if self.color_transform not in TRANSFORMS:
            raise ValueError(f"unknown colour transform {self.color_transform!r}")
        if min(self.wb_gains) <= 0:
            raise ValueError("white-balance gains must be strictly positive")
        if self.tone_gamma <= 0:
            raise ValueError("tone gamma must be positive")

    @property
    def pipeline_id(self) -> str:
        return f"{self.wb_mode}_{self.color_transform}"

    @property
    def gains(self) -> np.ndarray:
        return np.asarray(self.wb_gains, dtype=np.float64)

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.color_matrix, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "wb_mode": self.wb_mode,
            "color_transform": self.color_transform,
            "wb_gains": list(self.wb_gains),
            "color_matrix": [list(r) for r in self.color_matrix],
            "tone_gamma": self.tone_gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineSpec":
        return cls(
            wb_mode=d["wb_mode"],
            color_transform=d["color_transform"],
            wb_gains=tuple(float(g) for g in d["wb_gains"]),
            color_matrix=tuple(tuple(float(v) for v in row) for row in d["color_matrix"]),
            tone_gamma=float(d["tone_gamma"]),
        )


@dataclass
class DevelopedImage:
    scene_id: str
    pipeline: PipelineSpec
    pixels: np.ndarray  # H x W x 3 uint8


# --------------------------------------------------------------------------- scenes

def _smooth_field(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Band-limited noise in [-1, 1]: a coarse random grid upsampled bicubically."""
    gh, gw = h // cell + 3, w // cell + 3
    coarse = rng.standard_normal((gh, gw)).astype(np.float32)
    big = cv2.resize(coarse, (gw * cell, gh * cell), interpolation=cv2.INTER_CUBIC)
    big = big[cell:cell + h, cell:cell + w]
    lo, hi = float(big.min()), float(big.max())
    return (2.0 * (big - lo) / max(hi - lo, 1e-6) - 1.0).astype(np.float32)


def _planck_tint(temperature: float) -> np.ndarray:
    # Blackbody radiance sampled at representative R/G/B wavelengths.
    lam = np.array([600e-9, 540e-9, 460e-9])
    c2 = 1.4388e-2
    radiance = lam ** -5 / np.expm1(c2 / (lam * temperature))
    return radiance / radiance[1]


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[:, 0], hsv[:, 1], hsv[:, 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    table = np.stack([
        np.stack([v, t, p], 1), np.stack([q, v, p], 1), np.stack([p, v, t], 1),
        np.stack([p, q, v], 1), np.stack([t, p, v], 1), np.stack([v, p, q], 1),
    ])
    return table[i, np.arange(len(h))]


def synthesize_scene(seed: int, height: int = 512, width: int = 512) -> LinearScene:
    """Render a deterministic piecewise-smooth linear scene.

    Reflectance is a domain-warped Voronoi mosaic of coloured regions with
    per-region ramps and fine multiplicative texture; it is lit by a blackbody
    tint with mild low-frequency spatial variation and a shading field.
    """
    if height < MIN_SCENE_SIZE or width < MIN_SCENE_SIZE:
        raise ValueError(f"scene must be at least {MIN_SCENE_SIZE}x{MIN_SCENE_SIZE}, got {height}x{width}")
    seed = int(seed)
    rng = np.random.default_rng(seed)
    h, w = int(height), int(width)

    n_regions = int(rng.integers(10, 28))
    sites = rng.uniform(0, 1, size=(n_regions, 2)) * np.array([h, w])
    # Power-diagram weights: a few large "background" regions among small ones.
    big = rng.uniform(size=n_regions) < 0.25
    reach = np.where(big, rng.uniform(0.2, 0.4, n_regions), rng.uniform(0.0, 0.08, n_regions)) * max(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    warp = 0.08 * max(h, w)
    wy = yy + warp * _smooth_field(rng, h, w, 96)
    wx = xx + warp * _smooth_field(rng, h, w, 96)
    d2 = (wy[None] - sites[:, 0, None, None]) ** 2 + (wx[None] - sites[:, 1, None, None]) ** 2
    labels = np.argmin(d2 - (reach ** 2)[:, None, None], axis=0)

    # Scene palette: a dominant hue family plus outliers.
    base_hue = rng.uniform()
    hues = np.where(rng.uniform(size=n_regions) < 0.6,
                    (base_hue + rng.normal(0, 0.08, n_regions)) % 1.0,
                    rng.uniform(size=n_regions))
    sats = rng.uniform(0.05, 0.75, n_regions)
    vals = rng.uniform(0.25, 0.95, n_regions)
    albedo = _hsv_to_rgb(np.stack([hues, sats, vals], 1))

    ramp = rng.uniform(-0.6, 0.6, size=(n_regions, 2))
    ramp_field = 1.0 + (ramp[labels, 0] * (yy - h / 2) / h + ramp[labels, 1] * (xx - w / 2) / w)
    reflect = albedo[labels] * np.clip(ramp_field, 0.2, None)[..., None]
    reflect = cv2.GaussianBlur(reflect.astype(np.float32), (0, 0), 1.2)

    texture_amp = rng.uniform(0.02, 0.12)
    texture = 1.0 + texture_amp * _smooth_field(rng, h, w, 3)
    shading = 0.775 + 0.225 * _smooth_field(rng, h, w, 160)

    temperature = rng.uniform(2500.0, 10000.0)
    tint = _planck_tint(temperature)
    tint[1] *= np.exp(rng.normal(0, 0.06))
    tint = tint / tint[1]
    variation = np.stack([_smooth_field(rng, h, w, 192) for _ in range(3)], -1)
    illum = tint[None, None, :] * (1.0 + 0.06 * variation)

    pixels = reflect * (texture * shading)[..., None] * illum
    lum = pixels @ np.array([0.2126, 0.7152, 0.0722])
    exposure = rng.uniform(0.12, 0.3) / max(float(lum.mean()), 1e-6)
    pixels = np.clip(pixels * exposure, 0.0, None).astype(np.float32)
    return LinearScene(scene_id=f"s{seed:06d}", pixels=pixels, rng_seed=seed, illuminant=tint)


# ------------------------------------------------------------------------ pipelines

def enumerate_pipelines(seed: int) -> list[PipelineSpec]:
    """The 12 (white-balance mode x colour transform) pipelines of one virtual camera.

    Per-pipeline channel gains are uniform in ``GAIN_RANGE``; matrices are
    ``(1 - a) I + a R`` with ``a`` uniform in ``BLEND_RANGE`` and ``R`` the
    fixed reference matrix of the transform.
    """
    rng = np.random.default_rng([int(seed), 0xC0102])
    specs = []
    for wb_mode, transform in itertools.product(WB_MODES, TRANSFORMS):
        gains = rng.uniform(*GAIN_RANGE, size=3)
        a = rng.uniform(*BLEND_RANGE)
        m = (1.0 - a) * np.eye(3) + a * REFERENCE_MATRICES[transform]
        specs.append(PipelineSpec(
            wb_mode=wb_mode,
            color_transform=transform,
            wb_gains=tuple(float(g) for g in gains),
            color_matrix=tuple(tuple(float(v) for v in row) for row in m),
            tone_gamma=TONE_GAMMAS[transform],
        ))
    return specs


def white_balance_correction(scene: LinearScene, wb_mode: str) -> np.ndarray:
    """Scene-dependent channel multipliers of a white-balance mode, green fixed to 1."""
    if wb_mode == "noWB":
        return np.ones(3)
    if wb_mode == "cameraWB":
        est = np.asarray(scene.illuminant, dtype=np.float64)
    elif wb_mode == "autoWB":
        est = scene.pixels.reshape(-1, 3).astype(np.float64).mean(axis=0)
    else:
        raise ValueError(f"unknown white-balance mode {wb_mode!r}")
    corr = 1.0 / np.maximum(est, 1e-8)
    return corr / corr[1]


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def render(linear: np.ndarray, gains: np.ndarray, matrix: np.ndarray, gamma: float) -> np.ndarray:
    """Per-pixel map ``clip(round(255 * clip(M (g * v), 0, 1) ** (1 / gamma)))`` to uint8."""
    v = np.asarray(linear, dtype=np.float64) * np.asarray(gains, dtype=np.float64)
    v = v @ np.asarray(matrix, dtype=np.float64).T
    v = np.clip(v, 0.0, 1.0)
    if gamma != 1.0:
        v = v ** (1.0 / gamma)
    return np.clip(round_half_away(255.0 * v), 0, 255).astype(np.uint8)


def effective_gains(scene: LinearScene, pipeline: PipelineSpec) -> np.ndarray:
    return pipeline.gains * white_balance_correction(scene, pipeline.wb_mode)


def develop(scene: LinearScene, pipeline: PipelineSpec) -> DevelopedImage:
    pixels = render(scene.pixels, effective_gains(scene, pipeline), pipeline.matrix, pipeline.tone_gamma)
    return DevelopedImage(scene_id=scene.scene_id, pipeline=pipeline, pixels=pixels)


def develop_all(scene: LinearScene, pipelines=None) -> list[DevelopedImage]:
    if pipelines is None:
        pipelines = enumerate_pipelines(scene.rng_seed)
    return [develop(scene, p) for p in pipelines]


# ------------------------------------------------------------------ admissibility

def pairs_admissible(developed: list[DevelopedImage], params=None, stride: int = 64) -> bool:
    """True when every pipeline pair has at least one co-located admissible patch."""
    from . import patchlab

    params = params or patchlab.FilterParams()
    images = [d.pixels for d in developed]
    ok = patchlab.exposure_grid(images, params, stride)
    labs = [patchlab.rgb_to_lab(im) for im in images]
    for i, j in itertools.combinations(range(len(images)), 2):
        dist = patchlab.lab_distance_grid(labs[i], labs[j], stride)
        if not np.any(ok[i] & ok[j] & (dist >= params.delta_lab)):
            return False
    return True


def synthesize_admissible_scene(seed: int, height: int = 512, width: int = 512,
                                params=None, max_attempts: int = 10) -> LinearScene:
    """``synthesize_scene`` with re-draws until every pipeline pair admits a patch.

    Attempt 0 is exactly ``synthesize_scene(seed)``; later attempts draw from a
    derived seed but keep the original ``scene_id``.
    """
    for attempt in range(max_attempts):
        sub_seed = int(seed) if attempt == 0 else int(
            np.random.SeedSequence([int(seed), attempt]).generate_state(1)[0] & 0x7FFFFFFF)
        scene = synthesize_scene(sub_seed, height, width)
        scene.scene_id = f"s{int(seed):06d}"
        if pairs_admissible(develop_all(scene, enumerate_pipelines(scene.rng_seed)), params):
            return scene
        logger.info("scene %s attempt %d not admissible for all pipeline pairs", scene.scene_id, attempt)
    raise RuntimeError(f"no admissible scene for seed {seed} after {max_attempts} attempts")


# ------------------------------------------------------------------- disk layout

def write_scene_dir(root, scene: LinearScene, pipelines=None) -> Path:
    """Write ``<root>/<scene_id>/<wb_mode>_<transform>.png`` for all pipelines plus ``meta.json``."""
    pipelines = pipelines or enumerate_pipelines(scene.rng_seed)
    out = Path(root) / scene.scene_id
    out.mkdir(parents=True, exist_ok=True)
    for dev in develop_all(scene, pipelines):
        imaging.write_png(out / f"{dev.pipeline.pipeline_id}.png", dev.pixels)
    meta = {
        "scene_id": scene.scene_id,
        "seed": scene.rng_seed,
        "height": scene.shape[0],
        "width": scene.shape[1],
        "illuminant": [float(v) for v in scene.illuminant],
        "pipelines": [p.to_dict() for p in pipelines],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def read_meta(scene_dir) -> dict:
    return json.loads((Path(scene_dir) / "meta.json").read_text())


def load_scene(scene_dir) -> LinearScene:
    """Re-synthesise the linear scene recorded in a dataset directory."""
    meta = read_meta(scene_dir)
    scene = synthesize_scene(meta["seed"], meta["height"], meta["width"])
    scene.scene_id = meta["scene_id"]
    return scene


def list_scene_dirs(root) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if (p / "meta.json").is_file())
