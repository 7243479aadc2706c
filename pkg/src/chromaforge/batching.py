"""Mini-batch assembly with block ground truth, plus training-time augmentation.

A batch holds ``n_scenes`` scenes x ``n_pipelines`` pipelines x ``n_patches``
patches, ordered scene-major. Rows sharing scene *and* pipeline are similar
(``gt == False``); every other pair is dissimilar.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import cv2
import numpy as np

from . import colorpipe, imaging, patchlab
from .patchlab import PATCH_SIZE, FilterParams, Patch

logger = logging.getLogger(__name__)

MAX_DRAWS = 100
# Images whose larger side exceeds this are downscaled before patch sampling.
PRE_RESIZE_LARGER = 1536


@dataclass(frozen=True)
class BatchConfig:
    n_scenes: int = 8
    n_pipelines: int = 2
    n_patches: int = 8

    def __post_init__(self):
        if min(self.n_scenes, self.n_pipelines, self.n_patches) < 1:
            raise ValueError("batch dimensions must be positive")
        if self.n_pipelines >= len(colorpipe.WB_MODES) * len(colorpipe.TRANSFORMS):
            raise ValueError("n_pipelines must be smaller than the number of pipelines")

    @property
    def batch_size(self) -> int:
        return self.n_scenes * self.n_pipelines * self.n_patches


@dataclass
class MiniBatch:
    patches: list[Patch]
    gt: np.ndarray
    provenance: list[tuple[str, str]]

    def stacked(self) -> np.ndarray:
        return np.stack([p.pixels for p in self.patches])

    def __len__(self):
        return len(self.patches)


def build_ground_truth(cfg: BatchConfig) -> np.ndarray:
    groups = np.repeat(np.arange(cfg.n_scenes * cfg.n_pipelines), cfg.n_patches)
    return groups[:, None] != groups[None, :]


def pair_counts(cfg: BatchConfig) -> tuple[int, int]:
    """(similar, dissimilar) pair counts over ``i0 > i1``."""
    similar = cfg.n_scenes * cfg.n_pipelines * math.comb(cfg.n_patches, 2)
    return similar, math.comb(cfg.batch_size, 2) - similar


# ------------------------------------------------------------------ augmentation

@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    angle: float = 0.0  # degrees
    shear: float = 0.0  # degrees
    scale: float = 1.0
    jpeg_quality: int | None = None

    @property
    def is_geometric_identity(self) -> bool:
        return self.angle == 0.0 and self.shear == 0.0 and self.scale == 1.0


def draw_augment(rng: np.random.Generator) -> AugmentParams:
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-5.0, 5.0))
    shear = float(rng.uniform(-5.0, 5.0))
    scale = float(rng.uniform(0.95, 1.05))
    quality = int(rng.integers(50, 101)) if rng.random() < 0.5 else None
    return AugmentParams(flip_h, flip_v, angle, shear, scale, quality)


def affine_matrix(params: AugmentParams, size: int = PATCH_SIZE) -> np.ndarray:
    """Rotation x shear x isotropic scale about the patch centre, as a 2x3 matrix."""
    a, s = math.radians(params.angle), math.radians(params.shear)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shear = np.array([[1.0, math.tan(s)], [0.0, 1.0]])
    lin = params.scale * rot @ shear
    c = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    return np.hstack([lin, (c - lin @ c)[:, None]])


def apply_augment(patch: Patch, params: AugmentParams) -> Patch:
    px = patch.pixels
    if params.flip_h:
        px = px[:, ::-1]
    if params.flip_v:
        px = px[::-1]
    if not params.is_geometric_identity:
        px = cv2.warpAffine(np.ascontiguousarray(px), affine_matrix(params), (PATCH_SIZE, PATCH_SIZE),
                            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)
    if params.jpeg_quality is not None:
        px = imaging.jpeg_roundtrip(px, params.jpeg_quality)
    return Patch(np.ascontiguousarray(px), patch.center, patch.scene_id, patch.pipeline_id)


def augment(patch: Patch, rng: np.random.Generator) -> Patch:
    """Flip, rotate/shear within 5 degrees, rescale by [0.95, 1.05], JPEG with p=0.5."""
    return apply_augment(patch, draw_augment(rng))


# ---------------------------------------------------------------------- sampling

def _develop_for_batch(scene, pipeline):
    img = colorpipe.develop(scene, pipeline).pixels
    if max(img.shape[:2]) > PRE_RESIZE_LARGER:
        img = imaging.resize_to_larger_dim(img, PRE_RESIZE_LARGER)
    return img


def sample_scene_block(scene, cfg: BatchConfig, rng: np.random.Generator,
                       params: FilterParams = FilterParams(), pipelines=None,
                       max_draws: int = MAX_DRAWS) -> list[Patch] | None:
    """``n_pipelines`` x ``n_patches`` admissible patches from one scene, or None."""
    pipelines = pipelines if pipelines is not None else colorpipe.enumerate_pipelines(scene.rng_seed)
    chosen = rng.choice(len(pipelines), size=cfg.n_pipelines, replace=False)
    images = [_develop_for_batch(scene, pipelines[k]) for k in chosen]
    labs = [patchlab.rgb_to_lab(im) for im in images]
    h, w = images[0].shape[:2]
    if h < PATCH_SIZE or w < PATCH_SIZE:
        return None
    block = []
    for j, k in enumerate(chosen):
        pid = pipelines[k].pipeline_id
        found = []
        for _ in range(max_draws):
            if len(found) == cfg.n_patches:
                break
            top = int(rng.integers(0, h - PATCH_SIZE + 1))
            left = int(rng.integers(0, w - PATCH_SIZE + 1))
            win = (slice(top, top + PATCH_SIZE), slice(left, left + PATCH_SIZE))
            p0 = patchlab.crop(images[j], top, left, scene_id=scene.scene_id, pipeline_id=pid)
            peer_labs = [labs[o][win] for o in range(len(images)) if o != j]
            if patchlab.admit(p0, None, params, lab0=labs[j][win], peer_labs=peer_labs):
                found.append(p0)
        if not found:
            return None
        while len(found) < cfg.n_patches:
            found.append(found[int(rng.integers(len(found)))])
        block.extend(found)
    return block


def sample_epoch(scenes: Sequence, cfg: BatchConfig, rng: np.random.Generator,
                 params: FilterParams = FilterParams(), augment_patches: bool = True,
                 pipelines_for=None) -> Iterator[MiniBatch]:
    """Yield the mini-batches of one epoch.

    Scenes are visited in a fresh random permutation and consumed in disjoint
    groups; a scene without admissible patches is skipped and the next one in
    the permutation takes its place. Trailing scenes that cannot fill a batch
    are dropped. Each batch draws its own seed for per-patch augmentation streams.
    """
    if len(scenes) < cfg.n_scenes:
        raise ValueError(f"need at least {cfg.n_scenes} scenes, got {len(scenes)}")
    gt = build_ground_truth(cfg)
    order = rng.permutation(len(scenes))
    pending: list[Patch] = []
    used = 0
    for idx in order:
        scene = scenes[int(idx)]
        pipes = pipelines_for(scene) if pipelines_for is not None else None
        block = sample_scene_block(scene, cfg, rng, params, pipes)
        if block is None:
            logger.warning("scene %s yielded no admissible patch; skipped", scene.scene_id)
            continue
        pending.extend(block)
        used += 1
        if used == cfg.n_scenes:
            aug_seed = int(rng.integers(0, 2 ** 63))
            if augment_patches:
                pending = [augment(p, np.random.default_rng([aug_seed, i])) for i, p in enumerate(pending)]
            yield MiniBatch(pending, gt.copy(), [(p.scene_id, p.pipeline_id) for p in pending])
            pending, used = [], 0
