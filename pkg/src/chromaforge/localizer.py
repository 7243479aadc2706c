"""Turn patch embeddings of one image into a manipulation heatmap and a detection score."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import embedder, imaging, metricspace, patchlab
from .patchlab import PATCH_SIZE, FilterParams

ANALYSIS_LARGER_DIM = 1536
MEANSHIFT_BANDWIDTH = 0.3
MEDOID_TIE_TOL = 1e-12
CACHE_ENV = "CHROMAFORGE_CACHE"


@dataclass
class Heatmap:
    values: np.ndarray  # H x W float64 in [0, 1]
    model_id: str = ""
    stride: int = 32
    aggregation: str = "medoid"

    @property
    def shape(self):
        return self.values.shape


@dataclass
class AnalysisReport:
    heatmap: Heatmap
    detection_score: float
    n_patches: int
    n_filtered: int


def cached_embed(model: embedder.EmbeddingModel, patches, batch_size: int = 64) -> np.ndarray:
    """``embedder.embed`` memoised on disk under ``$CHROMAFORGE_CACHE`` when that variable is set.

    The key covers the model parameters, the batch size and every patch's pixels.
    """
    root = os.environ.get(CACHE_ENV)
    if not root:
        return embedder.embed(model, patches, batch_size)
    h = hashlib.sha256(f"{model.model_id}:{batch_size}:{len(patches)}".encode())
    for p in patches:
        h.update(np.ascontiguousarray(getattr(p, "pixels", p)).tobytes())
    path = Path(root) / f"emb_{h.hexdigest()[:32]}.npy"
    if path.is_file():
        return np.load(path)
    Y = embedder.embed(model, patches, batch_size)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f".{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, Y)
    os.replace(tmp, path)
    return Y


def _canonical_order(Y: np.ndarray) -> np.ndarray:
    # lexicographic order of the (rounded) unit directions, then of the raw
    # values, so only bitwise-equal rows keep their input order
    if Y.ndim != 2 or not Y.shape[1]:
        return np.arange(len(Y))
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    key = np.round(Y / np.where(norms > 0, norms, 1.0), 9)
    return np.lexsort(np.vstack([Y.T[::-1], key.T[::-1]]))


def medoid_index(Y) -> int:
    """Index of the embedding with minimal summed cosine distance.

    Totals within rounding noise count as tied and the tie goes to the
    lexicographically smallest direction, so the chosen direction depends
    neither on the row order nor on the length of each row.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if len(Y) == 0:
        raise ValueError("medoid of an empty set")
    order = _canonical_order(Y)
    totals = np.sort(metricspace.pairwise_distances(Y[order]), axis=1).sum(axis=1)
    tied = totals <= totals.min() + MEDOID_TIE_TOL * len(Y)
    return int(order[np.argmax(tied)])


def medoid(Y) -> np.ndarray:
    return np.asarray(Y, dtype=np.float64)[medoid_index(Y)]


def inconsistency_scores(Y, mu) -> np.ndarray:
    U = metricspace.normalize_rows(Y)
    m = np.asarray(mu, dtype=np.float64)
    if not np.any(m):
        raise ValueError("medoid is the zero vector")
    m = m / np.linalg.norm(m)
    return np.clip(0.5 * (1.0 - (U * m).sum(axis=1)), 0.0, 1.0)


def meanshift_modes(Y, bandwidth: float = MEANSHIFT_BANDWIDTH, max_iter: int = 100, tol: float = 1e-7):
    """Flat-kernel mean shift on the unit sphere under cosine distance.

    Every point seeds a mode; a mode moves to the re-normalised mean of all
    points within ``bandwidth``. Converged modes closer than ``bandwidth / 2``
    are merged greedily in lexicographic order of the inputs. Returns
    ``(cluster_modes, labels)`` with labels in input order.
    """
    Y = np.asarray(Y, dtype=np.float64)
    order = _canonical_order(Y)
    U = metricspace.normalize_rows(Y[order])
    modes = U.copy()
    for _ in range(max_iter):
        within = 0.5 * (1.0 - modes @ U.T) <= bandwidth
        counts = within.sum(axis=1)
        shifted = np.where(counts[:, None] > 0, within.astype(np.float64) @ U, modes)
        norms = np.linalg.norm(shifted, axis=1)
        shifted = np.where(norms[:, None] > 0, shifted / np.where(norms > 0, norms, 1.0)[:, None], modes)
        moved = np.max(np.abs(shifted - modes))
        modes = shifted
        if moved < tol:
            break
    centers, labels = [], np.empty(len(U), dtype=int)
    for i, m in enumerate(modes):
        for k, c in enumerate(centers):
            if 0.5 * (1.0 - m @ c) < bandwidth / 2:
                labels[i] = k
                break
        else:
            labels[i] = len(centers)
            centers.append(m)
    cluster_modes = []
    for k in range(len(centers)):
        mean = modes[labels == k].mean(axis=0)
        cluster_modes.append(mean / np.linalg.norm(mean))
    out = np.empty_like(labels)
    out[order] = labels
    return np.array(cluster_modes), out


def meanshift_scores(Y, bandwidth: float = MEANSHIFT_BANDWIDTH) -> np.ndarray:
    """Distance of each embedding to the mode of the most populated mean-shift cluster."""
    Y = np.asarray(Y, dtype=np.float64)
    if len(Y) == 0:
        raise ValueError("no embeddings")
    modes, labels = meanshift_modes(Y, bandwidth)
    largest = int(np.argmax(np.bincount(labels)))
    return inconsistency_scores(Y, modes[largest])


def project_heatmap(scores, centers, image_dims, patch_dims=(PATCH_SIZE, PATCH_SIZE), stride: int = 32,
                    out_dims=None) -> np.ndarray:
    """Average the scores of all patches covering each pixel.

    Pixels outside every patch copy the value of the nearest covered pixel.
    The map is finally resized bilinearly to ``out_dims`` when given.
    Patches are accumulated in (row, col) order so the result does not
    depend on the order of ``scores``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    centers = np.asarray(centers, dtype=int).reshape(-1, 2)
    h, w = int(image_dims[0]), int(image_dims[1])
    ph, pw = int(patch_dims[0]), int(patch_dims[1])
    if len(scores) != len(centers):
        raise ValueError("one score per patch centre is required")
    tops, lefts = centers[:, 0] - ph // 2, centers[:, 1] - pw // 2
    if len(centers) and (tops.min() < 0 or lefts.min() < 0 or (tops + ph).max() > h or (lefts + pw).max() > w):
        raise ValueError("patch footprint outside the image")
    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for k in np.lexsort((lefts, tops)):
        total[tops[k]:tops[k] + ph, lefts[k]:lefts[k] + pw] += scores[k]
        count[tops[k]:tops[k] + ph, lefts[k]:lefts[k] + pw] += 1
    covered = count > 0
    if not covered.any():
        raise ValueError("no patches to project")
    heat = np.zeros((h, w))
    heat[covered] = total[covered] / count[covered]
    if not covered.all():
        _, (ri, ci) = ndimage.distance_transform_edt(~covered, return_indices=True)
        heat = heat[ri, ci]
    if out_dims is not None and tuple(out_dims) != (h, w):
        heat = imaging.resize_bilinear(heat, int(out_dims[0]), int(out_dims[1]))
    return np.clip(heat, 0.0, 1.0)


def detection_score(h) -> float:
    values = h.values if isinstance(h, Heatmap) else np.asarray(h)
    return float(np.mean(values))


def analyze(image, model: embedder.EmbeddingModel, stride: int = 32, aggregation: str = "medoid",
            analysis_size: int | None = ANALYSIS_LARGER_DIM, params: FilterParams = FilterParams(),
            batch_size: int = 64) -> AnalysisReport:
    """Heatmap of inconsistency with the dominant imaging conditions of ``image``.

    The image is resized so its larger side equals ``analysis_size`` (``None``
    keeps it as is), cut into patches, and filtered for exposure and colour
    variation; rejected patches score 0. Scores are projected back and resized
    to the original resolution.
    """
    if aggregation not in ("medoid", "meanshift"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    img = imaging.as_uint8_rgb(image)
    orig = img.shape[:2]
    work = imaging.resize_to_larger_dim(img, analysis_size)
    if min(work.shape[:2]) < PATCH_SIZE:
        raise ValueError(f"image too small for {PATCH_SIZE}px patches after resizing: {work.shape[:2]}")
    patches = patchlab.extract_patches(work, stride)
    keep = np.array([patchlab.passes_exposure(p, params) for p in patches], dtype=bool)
    gamma = np.zeros(len(patches))
    if keep.any():
        Y = cached_embed(model, [p for p, k in zip(patches, keep) if k], batch_size=batch_size)
        if aggregation == "medoid":
            gamma[keep] = inconsistency_scores(Y, medoid(Y))
        else:
            gamma[keep] = meanshift_scores(Y)
    values = project_heatmap(gamma, [p.center for p in patches], work.shape[:2], stride=stride, out_dims=orig)
    heat = Heatmap(values, model.model_id, stride, aggregation)
    return AnalysisReport(heat, detection_score(heat), len(patches), int((~keep).sum()))


def write_heatmap(prefix, report: AnalysisReport) -> tuple[Path, Path, Path]:
    """Write ``<prefix>.png`` (8-bit view), ``<prefix>.f32`` (raw little-endian float32, row-major)
    and ``<prefix>.json`` (geometry, provenance and detection score)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    h = report.heatmap
    png, raw, meta = prefix.with_suffix(".png"), prefix.with_suffix(".f32"), prefix.with_suffix(".json")
    imaging.write_png(png, np.clip(np.rint(h.values * 255.0), 0, 255).astype(np.uint8))
    raw.write_bytes(h.values.astype("<f4").tobytes(order="C"))
    sidecar = {
        "height": int(h.shape[0]),
        "width": int(h.shape[1]),
        "stride": h.stride,
        "aggregation": h.aggregation,
        "model_id": h.model_id,
        "detection_score": report.detection_score,
        "n_patches": report.n_patches,
        "n_filtered": report.n_filtered,
    }
    meta.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return png, raw, meta


def read_heatmap(prefix) -> tuple[np.ndarray, dict]:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    values = np.frombuffer(prefix.with_suffix(".f32").read_bytes(), dtype="<f4")
    return values.reshape(meta["height"], meta["width"]), meta
