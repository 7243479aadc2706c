"""Detection and localization metrics."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given labels (e.g. a single class)."""


class PrecisionRecall(NamedTuple):
    precision: float | None  # None: undefined (no predicted positives)
    recall: float | None  # None: undefined (no actual positives)


def _both_classes(labels: np.ndarray):
    if labels.all() or not labels.any():
        raise UndefinedMetricError("both positive and negative samples are required")


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    return s, y


def confusion_counts(pred, gt) -> tuple[int, int, int, int]:
    """(TP, TN, FP, FN) for boolean arrays of equal shape."""
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, tn, fp, fn


def mcc_detail(pred, gt) -> tuple[float, bool]:
    """MCC and a flag that is True when the denominator vanished (MCC reported as 0)."""
    tp, tn, fp, fn = confusion_counts(pred, gt)
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0, True
    return (tp * tn - fp * fn) / math.sqrt(denom), False


def mcc(pred, gt) -> float:
    return mcc_detail(pred, gt)[0]


def _mcc_vec(tp, tn, fp, fn):
    tp, tn, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, tn, fp, fn))
    denom = np.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    num = tp * tn - fp * fn
    return np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)


def _threshold_sweep(values: np.ndarray, gt: np.ndarray):
    """MCC of ``values >= v`` for every distinct value v, ascending in v."""
    order = np.argsort(-values, kind="stable")
    v, g = values[order], gt[order]
    cum_tp = np.cumsum(g)
    cum_fp = np.cumsum(~g)
    last = np.r_[np.nonzero(v[1:] != v[:-1])[0], v.size - 1]
    tp, fp = cum_tp[last], cum_fp[last]
    n_pos, n_neg = int(g.sum()), int((~g).sum())
    scores = _mcc_vec(tp, n_neg - fp, fp, n_pos - tp)
    return v[last][::-1], scores[::-1]


def best_mcc_over_thresholds(heatmap, gt) -> tuple[float, float, bool]:
    """Best MCC over thresholds ``H >= t`` and ``(1 - H) >= t``.

    Returns ``(mcc, threshold, inverted)``; ``threshold`` applies to ``1 - H``
    when ``inverted``. Ties prefer the non-inverted map, then the lower threshold.
    """
    h = np.asarray(getattr(heatmap, "values", heatmap), dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=bool).ravel()
    if h.shape != g.shape:
        raise ValueError("heatmap and mask differ in shape")
    if g.all() or not g.any():
        raise UndefinedMetricError("ground truth must contain both classes")
    thr, score = _threshold_sweep(h, g)
    thr_inv, score_inv = _threshold_sweep(1.0 - h, g)
    k, k_inv = int(np.argmax(score)), int(np.argmax(score_inv))
    if score_inv[k_inv] > score[k]:
        return float(score_inv[k_inv]), float(thr_inv[k_inv]), True
    return float(score[k]), float(thr[k]), False


def roc_auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative), ties count 1/2."""
    s, y = _scores_labels(scores, labels)
    _both_classes(y)
    ranks = rankdata(s)  # average ranks handle ties
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tpr_at_far(scores, labels, far: float = 0.05) -> float:
    """Highest TPR of the rule ``score > t`` over thresholds whose FAR stays <= ``far``."""
    s, y = _scores_labels(scores, labels)
    _both_classes(y)
    neg = np.sort(s[~y])[::-1]
    allowed = int(math.floor(far * neg.size + 1e-9))
    if allowed >= neg.size:
        return 1.0
    t = neg[allowed]
    return float(np.mean(s[y] > t))


def precision_recall_at(scores, labels, threshold: float = 0.3) -> PrecisionRecall:
    """Precision/recall with ``score > threshold`` predicted positive (dissimilar)."""
    s, y = _scores_labels(scores, labels)
    pred = s > threshold
    tp = int(np.count_nonzero(pred & y))
    fp = int(np.count_nonzero(pred & ~y))
    fn = int(np.count_nonzero(~pred & y))
    prec = tp / (tp + fp) if tp + fp else None
    rec = tp / (tp + fn) if tp + fn else None
    return PrecisionRecall(prec, rec)


def angular_error(w, w_star) -> float:
    """Angle in degrees between two RGB vectors."""
    a, b = np.asarray(w, dtype=np.float64), np.asarray(w_star, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("angular error is undefined for the zero vector")
    return float(np.degrees(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0))))
