"""Property tests for the invariants the library promises. Each runs 1000 generated cases."""
import numpy as np
from hypothesis import HealthCheck, given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from chromaforge import localizer as lz, metricspace as ms, patchlab
from chromaforge.evalkit import metrics as mt
from chromaforge.evalkit.degradation import DegradationSpec, degrade

N_CASES = 1000
many = settings(max_examples=N_CASES, deadline=None, suppress_health_check=[HealthCheck.too_slow])

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
scale = st.floats(1e-3, 1e3)


def vectors(q):
    return hnp.arrays(np.float64, q, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


@st.composite
def vector_pairs(draw):
    q = draw(st.integers(1, 16))
    return draw(vectors(q)), draw(vectors(q))


@st.composite
def embedding_sets(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    q = draw(st.integers(1, 8))
    rows = draw(st.lists(vectors(q), min_size=n, max_size=n))
    return np.array(rows)


# ---------------------------------------------------------------- distances


@many
@given(vector_pairs(), scale, scale)
def test_distance_scale_invariance(ab, c1, c2):
    a, b = ab
    d = ms.distance(a, b)
    assert abs(ms.distance(c1 * a, c2 * b) - d) <= 1e-12
    assert abs(ms.distance(b, a) - d) <= 1e-15
    assert 0.0 <= d <= 1.0
    assert abs(ms.distance(a, a)) <= 1e-15


@many
@given(embedding_sets(), st.data())
def test_medoid_scale_invariance(Y, data):
    c = np.array(data.draw(st.lists(scale, min_size=len(Y), max_size=len(Y))))
    np.testing.assert_allclose(lz.medoid(Y * c[:, None]) / np.linalg.norm(lz.medoid(Y * c[:, None])),
                               lz.medoid(Y) / np.linalg.norm(lz.medoid(Y)), atol=1e-12)


@many
@given(hnp.arrays(np.float64, st.integers(2, 60), elements=st.floats(-1, 1)),
       st.lists(st.booleans(), min_size=60, max_size=60), st.integers(3, 40))
def test_histogram_mass(sims, flags, n_bins):
    labels = np.array(flags[:len(sims)])
    labels[0], labels[1] = True, False
    h = ms.soft_histograms(sims, labels, n_bins)
    for part in (h.h_plus, h.h_minus):
        assert abs(part.sum() - 1.0) <= 1e-12
        assert np.all((part >= 0) & (part <= 1))


# -------------------------------------------------------------- heatmaps


GRID = 4  # patch size and stride of the miniature geometry below, in units of STEP pixels
STEP = 4


@st.composite
def patch_layouts(draw):
    rows, cols = draw(st.integers(1, 5)), draw(st.integers(1, 5))
    size, stride = GRID * STEP, STEP
    extra_h, extra_w = draw(st.integers(0, stride - 1)), draw(st.integers(0, stride - 1))
    dims = (size + (rows - 1) * stride + extra_h, size + (cols - 1) * stride + extra_w)
    centers = [(size // 2 + i * stride, size // 2 + j * stride) for i in range(rows) for j in range(cols)]
    n = len(centers)
    q = draw(st.integers(1, 6))
    # a small value alphabet makes duplicate embeddings and tied medoid totals common
    Y = draw(hnp.arrays(np.float64, (n, q), elements=st.sampled_from([-2.0, -1.0, 0.5, 1.0, 3.0])))
    keep = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    keep[draw(st.integers(0, n - 1))] = True
    perm = np.array(draw(st.permutations(range(n))))
    return dims, centers, Y, keep, perm, (size, size), stride


def heatmap_from(Y, keep, centers, dims, patch_dims, stride, aggregation):
    gamma = np.zeros(len(centers))
    U = Y[keep]
    gamma[keep] = lz.inconsistency_scores(U, lz.medoid(U)) if aggregation == "medoid" else lz.meanshift_scores(U)
    return lz.project_heatmap(gamma, centers, dims, patch_dims, stride)


@many
@given(patch_layouts(), st.sampled_from(["medoid", "meanshift"]))
def test_heatmap_permutation_invariance(layout, aggregation):
    dims, centers, Y, keep, perm, patch_dims, stride = layout
    Y = np.where(np.linalg.norm(Y, axis=1, keepdims=True) > 0, Y, 1.0)
    base = heatmap_from(Y, keep, centers, dims, patch_dims, stride, aggregation)
    shuffled = heatmap_from(Y[perm], keep[perm], [centers[k] for k in perm], dims, patch_dims, stride, aggregation)
    np.testing.assert_array_equal(base, shuffled)
    assert lz.detection_score(base) == lz.detection_score(shuffled)
    assert base.shape == dims and np.all((0 <= base) & (base <= 1))


# ----------------------------------------------------------------- metrics


@st.composite
def scored_masks(draw, max_n=80):
    n = draw(st.integers(2, max_n))
    h = np.array(draw(st.lists(st.integers(0, 100), min_size=n, max_size=n)), dtype=np.float64) / 100
    gt = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    gt[0], gt[1] = True, False
    return h, gt


MONOTONE = {
    "affine": lambda h: 3.0 * h + 2.0,
    "exp": np.exp,
    "cubic": lambda h: h ** 3 + h,
    "log1p": np.log1p,
    "negate": lambda h: -h,
    "reciprocal": lambda h: 1.0 / (1.0 + h),
}


@many
@given(scored_masks(), st.sampled_from(sorted(MONOTONE)))
def test_best_mcc_monotone_transform_invariance(sample, name):
    h, gt = sample
    base = mt.best_mcc_over_thresholds(h, gt)[0]
    assert mt.best_mcc_over_thresholds(MONOTONE[name](h), gt)[0] == base


@many
@given(st.lists(st.booleans(), min_size=1, max_size=60), st.data())
def test_mcc_symmetries(pred, data):
    pred = np.array(pred)
    gt = np.array(data.draw(st.lists(st.booleans(), min_size=len(pred), max_size=len(pred))))
    m = mt.mcc(pred, gt)
    assert -1.0 <= m <= 1.0
    assert abs(mt.mcc(~pred, ~gt) - m) <= 1e-15
    assert abs(mt.mcc(gt, pred) - m) <= 1e-15


@many
@given(st.lists(st.integers(-10 ** 6, 10 ** 6), min_size=2, max_size=80, unique=True), st.data())
def test_auc_complement(values, data):
    s = np.array(values, dtype=np.float64)
    y = np.array(data.draw(st.lists(st.booleans(), min_size=len(s), max_size=len(s))))
    y[0], y[1] = True, False
    assert abs(mt.roc_auc(s, y) + mt.roc_auc(-s, y) - 1.0) <= 1e-12


# ---------------------------------------------------------- degrade, filters


@many
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 40), st.integers(1, 40), st.just(3))))
def test_degrade_identity(img):
    out = degrade(img, DegradationSpec(resize_factor=1.0, jpeg_quality=None))
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, img)


small_patches = hnp.arrays(np.uint8, (6, 6, 3))


@many
@given(small_patches, st.lists(small_patches, max_size=3), st.floats(0, 60), st.floats(0, 60))
def test_admit_monotone_in_delta_lab(p0, peers, d1, d2):
    lo, hi = sorted((d1, d2))
    loose = patchlab.FilterParams(delta_hi=10, delta_lo=10, delta_lab=lo)
    strict = patchlab.FilterParams(delta_hi=10, delta_lo=10, delta_lab=hi)
    if patchlab.admit(p0, peers, strict):
        assert patchlab.admit(p0, peers, loose)


@many
@given(small_patches, small_patches)
def test_lab_distance_symmetric_nonnegative(a, b):
    d = patchlab.lab_distance(a, b)
    assert d >= 0 and d == patchlab.lab_distance(b, a)
    assert patchlab.lab_distance(a, a) == 0.0
