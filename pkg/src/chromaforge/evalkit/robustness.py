"""TPR@5%FAR of pairwise patch distances under resize x JPEG degradations."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import colorpipe, embedder, imaging, metricspace, patchlab
from ..patchlab import PATCH_SIZE, FilterParams
from .degradation import JPEG_QUALITIES, RESIZE_FACTORS, DegradationSpec, degrade
from .metrics import tpr_at_far

MODES = ("diff-scene", "same-scene")
GRID_STRIDE = 32


@dataclass
class ImagePair:
    """Two developed images and the patch origins to compare.

    ``origins_b`` equals ``origins_a`` in same-scene mode (co-located patches).
    """
    image_a: np.ndarray
    image_b: np.ndarray
    origins_a: np.ndarray  # k x 2 (top, left)
    origins_b: np.ndarray
    colocated: bool


@dataclass
class RobustnessGrid:
    values: np.ndarray  # len(f_list) x len(q_list)
    f_list: tuple
    q_list: tuple
    mode: str
    lab_min: float = 0.0
    n_pairs: int = 0
    meta: dict = field(default_factory=dict)

    def entry(self, f, q) -> float:
        return float(self.values[self.f_list.index(f), self.q_list.index(q)])

    def to_csv(self, path) -> Path:
        """Rows are resize factors, columns JPEG qualities; floats written with ``repr`` precision."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f\\Q"] + [_q_label(q) for q in self.q_list])
            for f, row in zip(self.f_list, self.values):
                w.writerow([repr(float(f))] + [repr(float(v)) for v in row])
        return path

    @classmethod
    def from_csv(cls, path, mode: str = "", lab_min: float = 0.0) -> "RobustnessGrid":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        q_list = tuple(None if q == "id" else int(q) for q in rows[0][1:])
        f_list = tuple(float(r[0]) for r in rows[1:])
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(values, f_list, q_list, mode, lab_min)


def _q_label(q) -> str:
    return "id" if q is None else str(q)


def _grid_origins(shape, stride: int = GRID_STRIDE) -> np.ndarray:
    tops, lefts = patchlab.patch_origins(shape[0], shape[1], stride)
    return np.array([(t, l) for t in tops for l in lefts])


def _pick(rng, candidates: np.ndarray, k: int) -> np.ndarray:
    if len(candidates) <= k:
        return candidates
    return candidates[np.sort(rng.choice(len(candidates), size=k, replace=False))]


def sample_pairs(scenes, n_pairs: int = 50, n_patches: int = 50, mode: str = "diff-scene",
                 lab_min: float = 0.0, seed: int = 0, params: FilterParams = FilterParams(),
                 max_tries: int = 20) -> list[ImagePair]:
    """Draw image pairs and patch origins once, so every grid cell sees the same content.

    Candidate origins lie on a stride-32 lattice and must pass the exposure
    filters on the undegraded image(s). In same-scene mode each co-located
    patch pair must also differ by at least ``lab_min`` in mean Lab distance.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "diff-scene" and len(scenes) < 2:
        raise ValueError("diff-scene mode needs at least two scenes")
    rng = np.random.default_rng([seed, 0x0B05])
    pipes = {s.scene_id: colorpipe.enumerate_pipelines(s.rng_seed) for s in scenes}
    pairs = []
    for _ in range(n_pairs):
        for _try in range(max_tries):
            if mode == "diff-scene":
                ia, ib = rng.choice(len(scenes), size=2, replace=False)
                sa, sb = scenes[int(ia)], scenes[int(ib)]
                pa = pipes[sa.scene_id][int(rng.integers(len(pipes[sa.scene_id])))]
                pb = pipes[sb.scene_id][int(rng.integers(len(pipes[sb.scene_id])))]
            else:
                sa = sb = scenes[int(rng.integers(len(scenes)))]
                ka, kb = rng.choice(len(pipes[sa.scene_id]), size=2, replace=False)
                pa, pb = pipes[sa.scene_id][int(ka)], pipes[sa.scene_id][int(kb)]
            img_a, img_b = colorpipe.develop(sa, pa).pixels, colorpipe.develop(sb, pb).pixels
            if mode == "diff-scene":
                ok_a = patchlab.exposure_grid([img_a], params, GRID_STRIDE)[0].ravel()
                ok_b = patchlab.exposure_grid([img_b], params, GRID_STRIDE)[0].ravel()
                oa = _pick(rng, _grid_origins(img_a.shape)[ok_a], n_patches)
                ob = _pick(rng, _grid_origins(img_b.shape)[ok_b], n_patches)
                if len(oa) >= 2 and len(ob) >= 2:
                    pairs.append(ImagePair(img_a, img_b, oa, ob, False))
                    break
            else:
                ok = patchlab.exposure_grid([img_a, img_b], params, GRID_STRIDE)
                dist = patchlab.lab_distance_grid(patchlab.rgb_to_lab(img_a), patchlab.rgb_to_lab(img_b),
                                                  GRID_STRIDE)
                good = (ok[0] & ok[1] & (dist >= lab_min)).ravel()
                oa = _pick(rng, _grid_origins(img_a.shape)[good], n_patches)
                if len(oa) >= 2:
                    pairs.append(ImagePair(img_a, img_b, oa, oa, True))
                    break
        else:
            raise RuntimeError(f"no usable image pair after {max_tries} draws")
    return pairs


def _crops(image, origins) -> np.ndarray:
    return np.stack([image[t:t + PATCH_SIZE, l:l + PATCH_SIZE] for t, l in origins])


def _degrade_keep_size(image, spec: DegradationSpec) -> np.ndarray:
    out = degrade(image, spec)
    return imaging.resize_bilinear(out, image.shape[0], image.shape[1])


def pair_distances(model, pairs: list[ImagePair], spec: DegradationSpec) -> tuple[np.ndarray, np.ndarray]:
    """Distances and labels (True = dissimilar) pooled over all image pairs for one degradation.

    Similar pairs: patch pairs within each image. Dissimilar pairs: all cross-image
    patch pairs, or only co-located ones when the pair is same-scene.
    """
    scores, labels = [], []
    for pr in pairs:
        a = _crops(_degrade_keep_size(pr.image_a, spec), pr.origins_a)
        b = _crops(_degrade_keep_size(pr.image_b, spec), pr.origins_b)
        Y = embedder.embed(model, np.concatenate([a, b]))
        D = metricspace.pairwise_distances(Y)
        na = len(a)
        for lo, hi in ((0, na), (na, len(Y))):
            i0, i1 = metricspace.pair_indices(hi - lo)
            scores.append(D[lo:hi, lo:hi][i0, i1])
            labels.append(np.zeros(len(i0), dtype=bool))
        cross = np.diag(D[:na, na:]) if pr.colocated else D[:na, na:].ravel()
        scores.append(cross)
        labels.append(np.ones(cross.size, dtype=bool))
    return np.concatenate(scores), np.concatenate(labels)


def robustness_grid(model, scenes, f_list=RESIZE_FACTORS, q_list=JPEG_QUALITIES, mode: str = "diff-scene",
                    lab_min: float = 0.0, n_pairs: int = 50, n_patches: int = 50, seed: int = 0,
                    far: float = 0.05, params: FilterParams = FilterParams(), jobs: int = 1) -> RobustnessGrid:
    """TPR at ``far`` for every (resize factor, JPEG quality) cell.

    Degraded images are resized back to their original size before patches are
    cut, so the same patch origins apply in every cell.
    """
    pairs = sample_pairs(scenes, n_pairs, n_patches, mode, lab_min, seed, params)
    cells = [(i, j, DegradationSpec(resize_factor=f, jpeg_quality=q))
             for i, f in enumerate(f_list) for j, q in enumerate(q_list)]

    def run(cell):
        i, j, spec = cell
        s, y = pair_distances(model, pairs, spec)
        return i, j, tpr_at_far(s, y, far)

    values = np.full((len(f_list), len(q_list)), np.nan)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run, cells))
    else:
        results = [run(c) for c in cells]
    for i, j, v in results:
        values[i, j] = v
    return RobustnessGrid(values, tuple(f_list), tuple(q_list), mode, lab_min, len(pairs),
                          {"n_patches": n_patches, "seed": seed, "far": far})


def plot_grid(grid: RobustnessGrid, path, title: str | None = None) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(grid.values, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(len(grid.q_list)), [_q_label(q) for q in grid.q_list])
    ax.set_yticks(range(len(grid.f_list)), [f"{f:g}" for f in grid.f_list])
    ax.set_xlabel("JPEG quality")
    ax.set_ylabel("resize factor")
    for (i, j), v in np.ndenumerate(grid.values):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center", color="w" if v < 0.6 else "k", fontsize=8)
    ax.set_title(title or f"TPR@5% {grid.mode}" + (f" lab>={grid.lab_min:g}" if grid.mode == "same-scene" else ""))
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
