"""Cosine metric, soft-binned histogram loss and global orthogonal regularizer.

Everything here is float64 numpy with a hand-written backward pass
(:func:`total_loss_and_grad`); :class:`TorchMetricLoss` plugs it into autograd.

Pairs are always the strictly lower triangle ``i0 > i1``. Histograms are over
cosine *similarities* on ``R`` equidistant nodes from -1 to 1; ``h_plus`` is the
similar-pair histogram, ``h_minus`` the dissimilar one. The loss
``sum_r h_minus[r] * cumsum(h_plus)[r]`` estimates the probability that a
similar pair is less similar than a dissimilar pair.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BINS = 26
EMBED_DIM = 64
NORM_EPS = 1e-12  # floor on embedding norms inside similarities


def _check_nonzero(*vectors):
    for v in vectors:
        if not np.any(v):
            raise ValueError("cosine similarity is undefined for the zero vector")


def cosine_similarity(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_nonzero(a, b)
    s = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(-1.0, s))


def distance(a, b) -> float:
    return 0.5 * (1.0 - cosine_similarity(a, b))


def normalize_rows(Y, eps: float = 0.0) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    norms = np.linalg.norm(Y, axis=1)
    if eps == 0.0 and np.any(norms == 0):
        raise ValueError("cosine similarity is undefined for the zero vector")
    return Y / np.maximum(norms, eps)[:, None]


def pairwise_similarities(Y, eps: float = 0.0) -> np.ndarray:
    U = normalize_rows(Y, eps)
    return np.clip(U @ U.T, -1.0, 1.0)


def pairwise_distances(Y) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    D = 0.5 * (1.0 - pairwise_similarities(Y))
    np.fill_diagonal(D, 0.0)
    return np.clip(D, 0.0, 1.0)


def pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(i0, i1)`` of all pairs with ``i0 > i1``."""
    return np.tril_indices(n, -1)


def histogram_nodes(n_bins: int = N_BINS) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n_bins)


@dataclass
class HistogramPair:
    nodes: np.ndarray
    h_plus: np.ndarray
    h_minus: np.ndarray

    @property
    def spacing(self) -> float:
        return 2.0 / (len(self.nodes) - 1)


def _bin_positions(sims: np.ndarray, n_bins: int):
    delta = 2.0 / (n_bins - 1)
    pos = (np.clip(sims, -1.0, 1.0) + 1.0) / delta
    lower = np.clip(np.floor(pos).astype(int), 0, n_bins - 2)
    frac = pos - lower
    return lower, frac, delta


def _soft_hist(lower, frac, n_bins, count) -> np.ndarray:
    h = np.bincount(lower, weights=1.0 - frac, minlength=n_bins)
    h += np.bincount(lower + 1, weights=frac, minlength=n_bins)
    return h / count


def soft_histograms(similarities, labels, n_bins: int = N_BINS) -> HistogramPair:
    """Linear-interpolation histograms; ``labels`` is True for dissimilar pairs."""
    sims = np.asarray(similarities, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if sims.shape != labels.shape:
        raise ValueError("similarities and labels must have the same length")
    n_minus = int(labels.sum())
    n_plus = labels.size - n_minus
    if n_plus == 0 or n_minus == 0:
        raise ValueError("both similar and dissimilar pairs are required")
    lower, frac, _ = _bin_positions(sims, n_bins)
    h_plus = _soft_hist(lower[~labels], frac[~labels], n_bins, n_plus)
    h_minus = _soft_hist(lower[labels], frac[labels], n_bins, n_minus)
    return HistogramPair(histogram_nodes(n_bins), h_plus, h_minus)


def histogram_loss(h: HistogramPair) -> float:
    return float(np.dot(h.h_minus, np.cumsum(h.h_plus)))


def _dissimilar_sims(Y, gt, eps=NORM_EPS):
    S = pairwise_similarities(Y, eps)
    i0, i1 = pair_indices(S.shape[0])
    labels = np.asarray(gt, dtype=bool)[i0, i1]
    return S[i0, i1], labels


def moments(Y, gt) -> tuple[float, float]:
    """Mean and mean square of cosine similarity over dissimilar pairs (``i0 > i1``)."""
    sims, labels = _dissimilar_sims(Y, gt)
    if not labels.any():
        raise ValueError("no dissimilar pairs")
    s = sims[labels]
    return float(s.mean()), float((s ** 2).mean())


def orthogonal_regularizer(m1: float, m2: float, q: int = EMBED_DIM) -> float:
    return m1 ** 2 + max(0.0, m2 - 1.0 / q)


def total_loss(Y, gt, eta: float = 0.5, n_bins: int = N_BINS, q: int | None = None) -> float:
    return total_loss_and_grad(Y, gt, eta, n_bins, q, need_grad=False)[0]


def total_loss_and_grad(Y, gt, eta: float = 0.5, n_bins: int = N_BINS, q: int | None = None,
                        need_grad: bool = True):
    """Histogram loss + ``eta`` * orthogonal regularizer, and its gradient w.r.t. ``Y``.

    Returns ``(loss, dL/dY or None, parts)`` where ``parts`` holds the two terms
    and the moments. ``q`` defaults to the embedding dimension.

    Subgradients: a similarity exactly on a node is binned by the interpolation
    formula (it belongs to the bin starting at that node) and the hinge has
    derivative 0 at ``M2 == 1/q``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    n, dim = Y.shape
    q = dim if q is None else q
    norms = np.linalg.norm(Y, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero embedding")
    denom = np.maximum(norms, NORM_EPS)
    U = Y / denom[:, None]
    i0, i1 = pair_indices(n)
    sims = (U[i0] * U[i1]).sum(axis=1)
    labels = np.asarray(gt, dtype=bool)[i0, i1]
    n_minus = int(labels.sum())
    n_plus = labels.size - n_minus
    if n_plus == 0 or n_minus == 0:
        raise ValueError("both similar and dissimilar pairs are required")

    lower, frac, delta = _bin_positions(sims, n_bins)
    h_plus = _soft_hist(lower[~labels], frac[~labels], n_bins, n_plus)
    h_minus = _soft_hist(lower[labels], frac[labels], n_bins, n_minus)
    phi_plus = np.cumsum(h_plus)
    l_hist = float(np.dot(h_minus, phi_plus))

    s_neg = sims[labels]
    m1, m2 = float(s_neg.mean()), float((s_neg ** 2).mean())
    reg = orthogonal_regularizer(m1, m2, q)
    loss = l_hist + eta * reg
    parts = {"hist": l_hist, "reg": reg, "m1": m1, "m2": m2}
    if not need_grad:
        return loss, None, parts

    # dL/dh_minus[r] = phi_plus[r]; dL/dh_plus[k] = sum_{r >= k} h_minus[r]
    tail_minus = np.cumsum(h_minus[::-1])[::-1]
    g = np.empty_like(sims)
    lo_p, lo_m = lower[~labels], lower[labels]
    g[~labels] = (tail_minus[lo_p + 1] - tail_minus[lo_p]) / (delta * n_plus)
    g[labels] = (phi_plus[lo_m + 1] - phi_plus[lo_m]) / (delta * n_minus)
    hinge = 1.0 if m2 > 1.0 / q else 0.0
    g[labels] += eta * (2.0 * m1 + hinge * 2.0 * s_neg) / n_minus

    G = np.zeros((n, n))
    G[i0, i1] = g
    G = G + G.T
    gU = G @ U
    # below NORM_EPS the norm is frozen, so the radial term vanishes
    radial = np.where(norms > NORM_EPS, (Y * gU).sum(axis=1) / (norms * denom ** 2), 0.0)
    grad = gU / denom[:, None] - Y * radial[:, None]
    return loss, grad, parts


class TorchMetricLoss:
    """Autograd bridge: ``TorchMetricLoss(gt, eta)(embeddings)`` returns a scalar tensor."""

    def __init__(self, gt, eta: float = 0.5, n_bins: int = N_BINS, q: int | None = None):
        import torch

        gt = np.asarray(gt, dtype=bool)

        class _Fn(torch.autograd.Function):
            @staticmethod
            def forward(ctx, Y):
                loss, grad, parts = total_loss_and_grad(Y.detach().cpu().double().numpy(), gt, eta, n_bins, q)
                ctx.save_for_backward(torch.from_numpy(grad).to(Y.dtype))
                ctx.parts = parts
                return Y.new_tensor(loss)

            @staticmethod
            def backward(ctx, grad_out):
                (grad,) = ctx.saved_tensors
                return grad_out * grad

        self._fn = _Fn
        self.parts = None

    def __call__(self, Y):
        return self._fn.apply(Y)
