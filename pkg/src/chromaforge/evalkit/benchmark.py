"""Synthetic splicing benchmark: one region of a scene re-developed with a different pipeline."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.segmentation import felzenszwalb

from .. import colorpipe, imaging, patchlab

logger = logging.getLogger(__name__)

MIN_REGION = 50_000
MIN_REGION_LAB = 5.0
FH_SCALE = 10.0
FH_SIGMA = 0.5
# Smallest segment FH may emit. The region floor is 5e4 px, so merging everything
# below 1e4 px only removes segments that could never qualify anyway.
FH_MIN_SIZE = 10_000
# Scene seeds of the benchmark live in their own range, away from training seeds.
SCENE_SEED_BASE = 100_000_000


@dataclass
class SplicedItem:
    item_id: str
    spliced: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W bool, True = region taken from pipeline B
    pristine: np.ndarray  # pipeline A development of the same scene
    scene_id: str
    scene_seed: int
    pipeline_a: str
    pipeline_b: str
    region_lab: float

    @property
    def pristine_mask(self) -> np.ndarray:
        return np.zeros_like(self.mask)


def fh_segments(image, scale: float = FH_SCALE, sigma: float = FH_SIGMA, min_size: int = FH_MIN_SIZE) -> np.ndarray:
    return felzenszwalb(image, scale=scale, sigma=sigma, min_size=min_size)


def rect_segments(shape, rng: np.random.Generator, min_region: int = MIN_REGION, n: int = 4) -> np.ndarray:
    """Label map with ``n`` random axis-aligned rectangles (labels 1..n, background 0).

    Later rectangles overwrite earlier ones, so some may end up below the size floor.
    """
    h, w = shape
    labels = np.zeros((h, w), dtype=int)
    for k in range(1, n + 1):
        rh = int(rng.integers(min(h, int(np.ceil(min_region / w))), h + 1))
        rw = int(rng.integers(min(w, int(np.ceil(min_region / rh))), w + 1))
        top, left = int(rng.integers(0, h - rh + 1)), int(rng.integers(0, w - rw + 1))
        labels[top:top + rh, left:left + rw] = k
    return labels


def region_lab_distance(lab_a: np.ndarray, lab_b: np.ndarray, mask: np.ndarray) -> float:
    return patchlab.mean_lab_distance(lab_a[mask], lab_b[mask])


def _try_scene(scene_seed: int, height: int, width: int, rng, segmentation: str,
               min_region: int, min_lab: float, max_pipeline_tries: int):
    scene = colorpipe.synthesize_scene(scene_seed, height, width)
    pipelines = colorpipe.enumerate_pipelines(scene.rng_seed)
    for a in rng.permutation(len(pipelines))[:max_pipeline_tries]:
        img_a = colorpipe.develop(scene, pipelines[a]).pixels
        if segmentation == "fh":
            labels = fh_segments(img_a)
        elif segmentation == "rect":
            labels = rect_segments(img_a.shape[:2], rng, min_region)
        else:
            raise ValueError(f"unknown segmentation {segmentation!r}")
        counts = np.bincount(labels.ravel())
        big = np.flatnonzero(counts >= min_region)
        if big.size == 0:
            continue
        lab_a = patchlab.rgb_to_lab(img_a)
        for b in rng.permutation([k for k in range(len(pipelines)) if k != a]):
            img_b = colorpipe.develop(scene, pipelines[b]).pixels
            lab_b = patchlab.rgb_to_lab(img_b)
            for seg in rng.permutation(big):
                mask = labels == seg
                dist = region_lab_distance(lab_a, lab_b, mask)
                if dist >= min_lab:
                    spliced = img_a.copy()
                    spliced[mask] = img_b[mask]
                    return scene, pipelines[a], pipelines[b], img_a, spliced, mask, dist
    return None


def build_spliced_dataset(n: int, seed: int = 0, height: int = 512, width: int = 512,
                          segmentation: str = "fh", min_region: int = MIN_REGION,
                          min_lab: float = MIN_REGION_LAB, max_pipeline_tries: int = 3,
                          max_scene_tries: int = 20) -> list[SplicedItem]:
    """``n`` spliced images with masks and pristine twins.

    For each item a scene is developed with pipeline A, segmented (FH, or random
    rectangles with ``segmentation="rect"``), and a segment of at least
    ``min_region`` pixels whose A-vs-B mean Lab distance is at least ``min_lab``
    is replaced by the pipeline-B development. Scenes without such a segment
    are resampled, at most ``max_scene_tries`` times per item.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if min_region > height * width:
        raise ValueError("min_region exceeds the image area")
    rng = np.random.default_rng([seed, 0x5011CE])
    items = []
    for k in range(n):
        for attempt in range(max_scene_tries):
            scene_seed = SCENE_SEED_BASE + int(rng.integers(0, SCENE_SEED_BASE))
            got = _try_scene(scene_seed, height, width, rng, segmentation, min_region, min_lab,
                             max_pipeline_tries)
            if got is not None:
                break
            logger.info("item %d: scene %d has no qualifying segment, resampling", k, scene_seed)
        else:
            raise RuntimeError(f"item {k}: no qualifying segment after {max_scene_tries} scenes")
        scene, pa, pb, img_a, spliced, mask, dist = got
        items.append(SplicedItem(f"item{k:04d}", spliced, mask, img_a, scene.scene_id, scene_seed,
                                 pa.pipeline_id, pb.pipeline_id, dist))
    return items


# ------------------------------------------------------------------- disk layout

def write_spliced_dataset(root, items: list[SplicedItem]) -> Path:
    """``<root>/<item_id>/{spliced,pristine,mask}.png`` plus ``<root>/index.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = []
    for it in items:
        d = root / it.item_id
        d.mkdir(exist_ok=True)
        imaging.write_png(d / "spliced.png", it.spliced)
        imaging.write_png(d / "pristine.png", it.pristine)
        imaging.write_png(d / "mask.png", it.mask.astype(np.uint8) * 255)
        index.append({"item_id": it.item_id, "scene_id": it.scene_id, "scene_seed": it.scene_seed,
                      "pipeline_a": it.pipeline_a, "pipeline_b": it.pipeline_b, "region_lab": it.region_lab,
                      "region_pixels": int(it.mask.sum())})
    (root / "index.json").write_text(json.dumps({"items": index}, indent=2) + "\n")
    return root


def read_spliced_dataset(root) -> list[SplicedItem]:
    root = Path(root)
    index = json.loads((root / "index.json").read_text())["items"]
    items = []
    for e in index:
        d = root / e["item_id"]
        mask = imaging.read_png(d / "mask.png")[..., 0] > 127
        items.append(SplicedItem(e["item_id"], imaging.read_png(d / "spliced.png"), mask,
                                 imaging.read_png(d / "pristine.png"), e["scene_id"], e["scene_seed"],
                                 e["pipeline_a"], e["pipeline_b"], e["region_lab"]))
    return items
