import json

import numpy as np
import pytest
import torch

from chromaforge import embedder, localizer as lz

import oracles


def test_medoid_cases():
    v = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(lz.medoid(v), v[0])
    assert lz.medoid_index(np.array([[1.0, 0.0], [0.0, 1.0]])) == 1  # tie: lexicographically smaller row
    same_dir = np.array([[3.0, 3.0], [0.5, 0.5]])  # equal directions: the shorter row wins in any order
    assert lz.medoid_index(same_dir) == 1 and lz.medoid_index(same_dir[::-1]) == 0
    with pytest.raises(ValueError):
        lz.medoid_index(np.zeros((0, 4)))
    rng = np.random.default_rng(0)
    for _ in range(20):
        Y = rng.normal(size=(5, 6))
        assert lz.medoid_index(Y) == oracles.medoid_index(Y)


def test_inconsistency_scores():
    mu = np.array([1.0, 0.0, 0.0])
    Y = np.array([[2.0, 0, 0], [0, 3.0, 0], [-1.0, 0, 0]])
    np.testing.assert_allclose(lz.inconsistency_scores(Y, mu), [0.0, 0.5, 1.0], atol=1e-15)
    rng = np.random.default_rng(1)
    Y = rng.normal(size=(10, 4))
    expected = [0.5 * (1 - oracles.cos_sim(y, Y[3])) for y in Y]
    np.testing.assert_allclose(lz.inconsistency_scores(Y, Y[3]), expected, atol=1e-12)


def two_clusters(n_big=9, n_small=1, seed=0):
    rng = np.random.default_rng(seed)
    a = np.array([1.0, 0, 0, 0]) + 0.01 * rng.normal(size=(n_big, 4))
    b = np.array([0, 1.0, 0, 0]) + 0.01 * rng.normal(size=(n_small, 4))
    return np.vstack([a, b])


def test_meanshift_cases():
    same = np.tile([[0.3, -1.0, 2.0]], (6, 1))
    np.testing.assert_allclose(lz.meanshift_scores(same), 0.0, atol=1e-12)
    Y = two_clusters()
    g = lz.meanshift_scores(Y)
    assert len(g) == 10
    assert g[-1] == pytest.approx(0.5, abs=0.02)  # the two cluster centres are orthogonal
    assert np.all(g[:9] < 0.01)
    modes, labels = lz.meanshift_modes(Y)
    assert len(modes) == 2 and sorted(np.bincount(labels).tolist()) == [1, 9]
    assert len(set(labels[:9])) == 1 and labels[9] != labels[0]


def test_project_uniform_and_single():
    centers = [(64 + 32 * i, 64 + 32 * j) for i in range(3) for j in range(4)]
    h = lz.project_heatmap(np.full(12, 0.3), centers, (192, 224))
    np.testing.assert_allclose(h, 0.3)
    single = lz.project_heatmap([0.7], [(64, 64)], (128, 128))
    np.testing.assert_allclose(single, 0.7)


def test_project_overlap_average_and_nearest_fill():
    h = lz.project_heatmap([0.0, 1.0], [(64, 64), (64, 96)], (140, 170))
    assert h[10, 50] == 0.5 and h[10, 10] == 0.0 and h[10, 150] == 1.0
    ref, covered = oracles.covering_mean([0.0, 1.0], [(64, 64), (64, 96)], (140, 170), 128)
    np.testing.assert_allclose(h[covered], ref[covered], atol=1e-15)
    assert h[139, 165] == 1.0  # uncovered corner takes the nearest covered value


def test_project_order_invariant_and_errors():
    rng = np.random.default_rng(2)
    centers = [(64 + 32 * i, 64 + 32 * j) for i in range(4) for j in range(4)]
    s = rng.random(16)
    perm = rng.permutation(16)
    a = lz.project_heatmap(s, centers, (230, 230))
    b = lz.project_heatmap(s[perm], [centers[k] for k in perm], (230, 230))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        lz.project_heatmap([0.1], [(10, 10)], (128, 128))
    with pytest.raises(ValueError):
        lz.project_heatmap([0.1, 0.2], [(64, 64)], (128, 128))


def test_project_resize_to_original():
    h = lz.project_heatmap([0.2, 0.8], [(64, 64), (64, 192)], (128, 256), out_dims=(64, 128))
    assert h.shape == (64, 128)
    assert 0.2 <= h.min() and h.max() <= 0.8


def test_detection_score():
    assert lz.detection_score(np.zeros((4, 4))) == 0.0
    assert lz.detection_score(np.ones((4, 4))) == 1.0
    half = np.zeros((4, 4))
    half[:2] = 1
    assert lz.detection_score(lz.Heatmap(half)) == 0.5


class ConstantNet(torch.nn.Module):
    """Maps every patch to the same embedding."""

    def __init__(self):
        super().__init__()
        self.bias = torch.nn.Parameter(torch.arange(1.0, 65.0))

    def forward(self, x):
        return self.bias.expand(x.shape[0], 64)


@pytest.fixture(scope="module")
def model():
    return embedder.build_model(seed=0)


def test_constant_embedding_gives_zero_heatmap():
    m = embedder.EmbeddingModel(ConstantNet(), {"name": "constant"})
    img = np.random.default_rng(0).integers(0, 256, size=(200, 260, 3), dtype=np.uint8)
    rep = lz.analyze(img, m, analysis_size=None)
    assert rep.heatmap.shape == (200, 260)
    assert np.all(rep.heatmap.values == 0) and rep.detection_score == 0.0


def test_analyze_contract(model):
    rng = np.random.default_rng(3)
    img = rng.integers(20, 230, size=(150, 210, 3), dtype=np.uint8)
    img[:, :70] = 255  # saturated strip: patches there are filtered
    rep = lz.analyze(img, model, analysis_size=None)
    assert rep.heatmap.shape == (150, 210)
    assert rep.n_patches == 3 and rep.n_filtered >= 1
    assert 0 <= rep.heatmap.values.min() and rep.heatmap.values.max() <= 1
    assert rep.detection_score == pytest.approx(rep.heatmap.values.mean())
    again = lz.analyze(img, model, analysis_size=None)
    np.testing.assert_array_equal(rep.heatmap.values, again.heatmap.values)
    ms = lz.analyze(img, model, aggregation="meanshift", analysis_size=None)
    assert ms.heatmap.aggregation == "meanshift"


def test_analyze_resizes_back(model):
    img = np.random.default_rng(4).integers(0, 256, size=(90, 120, 3), dtype=np.uint8)
    rep = lz.analyze(img, model, analysis_size=256)
    assert rep.heatmap.shape == (90, 120)
    with pytest.raises(ValueError):
        lz.analyze(img, model, analysis_size=None)
    with pytest.raises(ValueError):
        lz.analyze(img, model, aggregation="mode")


def test_heatmap_files_roundtrip(tmp_path, model):
    img = np.random.default_rng(5).integers(0, 256, size=(160, 160, 3), dtype=np.uint8)
    rep = lz.analyze(img, model, analysis_size=None)
    png, raw, meta = lz.write_heatmap(tmp_path / "h", rep)
    values, sidecar = lz.read_heatmap(tmp_path / "h")
    np.testing.assert_array_equal(values, rep.heatmap.values.astype(np.float32))
    assert raw.stat().st_size == 160 * 160 * 4
    d = json.loads(meta.read_text())
    assert {"height", "width", "stride", "aggregation", "model_id", "detection_score"} <= set(d)
    assert d["model_id"] == model.model_id and d["detection_score"] == rep.detection_score


def test_embedding_cache(tmp_path, model, monkeypatch):
    img = np.random.default_rng(6).integers(0, 256, size=(160, 192, 3), dtype=np.uint8)
    plain = lz.analyze(img, model, analysis_size=None)
    monkeypatch.setenv("CHROMAFORGE_CACHE", str(tmp_path))
    first = lz.analyze(img, model, analysis_size=None)
    assert len(list(tmp_path.glob("emb_*.npy"))) == 1
    second = lz.analyze(img, model, analysis_size=None)
    np.testing.assert_array_equal(first.heatmap.values, plain.heatmap.values)
    np.testing.assert_array_equal(second.heatmap.values, plain.heatmap.values)
