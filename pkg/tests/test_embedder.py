import json

import numpy as np
import pytest
import torch

from chromaforge import batching, colorpipe as cp, embedder as em, metricspace
from chromaforge.evalkit.metrics import roc_auc


@pytest.fixture(scope="module")
def patches():
    return np.random.default_rng(0).integers(0, 256, size=(10, 128, 128, 3), dtype=np.uint8)


def test_embed_shape_and_determinism(patches):
    m = em.build_model(seed=1)
    Y = em.embed(m, patches)
    assert Y.shape == (10, 64) and Y.dtype == np.float64
    dup = em.embed(m, np.stack([patches[0], patches[0]]))
    np.testing.assert_array_equal(dup[0], dup[1])
    np.testing.assert_array_equal(em.embed(m, patches), Y)
    assert em.embed(m, []).shape == (0, 64)
    with pytest.raises(ValueError):
        em.embed(m, patches[:, :64])


def test_models_seeded(patches):
    a, b, c = em.build_model(3), em.build_model(3), em.build_model(4)
    assert a.model_id == b.model_id != c.model_id
    np.testing.assert_array_equal(em.embed(a, patches), em.embed(b, patches))


def test_validation_auc_matches_evalkit():
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(24, 8))
    gt = batching.build_ground_truth(batching.BatchConfig(3, 2, 4))
    D = metricspace.pairwise_distances(Y)
    i0, i1 = metricspace.pair_indices(24)
    assert em.validation_roc_auc(D, gt) == roc_auc(D[i0, i1], gt[i0, i1])
    perfect = np.where(gt, 0.9, 0.1)
    np.fill_diagonal(perfect, 0)
    assert em.validation_roc_auc(perfect, gt) == 1.0
    assert em.validation_roc_auc(np.full((24, 24), 0.3), gt) == 0.5


def test_train_config_defaults_and_roundtrip():
    cfg = em.TrainConfig()
    assert (cfg.learning_rate, cfg.moment1, cfg.moment2) == (1e-4, 0.9, 0.999)
    assert cfg.plateau_patience == 20 and cfg.lr_decay == 0.1 and cfg.eta == 0.5
    assert cfg.early_stop_patience == 40
    assert em.TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        em.TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        em.TrainConfig(plateau_patience=0)


@pytest.fixture(scope="module")
def tiny_scenes():
    return [cp.synthesize_scene(500 + i, 256, 256) for i in range(12)]


TINY = dict(batch=batching.BatchConfig(4, 2, 4), n_val_batches=1)


def test_train_zero_epochs_and_errors(tiny_scenes):
    m = em.build_model(0)
    before = m.model_id
    m2, hist = em.train(m, tiny_scenes[:8], tiny_scenes[8:], em.TrainConfig(max_epochs=0, **TINY))
    assert m2.model_id == before and hist.records == []
    with pytest.raises(ValueError):
        em.train(m, [], tiny_scenes, em.TrainConfig(**TINY))
    with pytest.raises(ValueError):
        em.train(m, tiny_scenes[:8], tiny_scenes[6:], em.TrainConfig(**TINY))


def test_short_training_reproducible_and_checkpoint(tmp_path, tiny_scenes):
    cfg = em.TrainConfig(max_epochs=2, learning_rate=1e-3, **TINY)
    runs = []
    for _ in range(2):
        m, hist = em.train(em.build_model(0), tiny_scenes[:8], tiny_scenes[8:], cfg)
        runs.append((m, hist))
    (m, hist), (m_b, hist_b) = runs
    assert len(hist.records) == 2 and hist.best_epoch in (0, 1)
    assert m.model_id == m_b.model_id
    assert [r.val_loss for r in hist.records] == [r.val_loss for r in hist_b.records]
    assert m.model_id != em.build_model(0).model_id

    path = em.save_checkpoint(m, tmp_path / "m.npz", cfg, hist)
    loaded, header = em.load_checkpoint(path)
    assert header["format"] == em.CHECKPOINT_FORMAT and header["seed"] == 0
    assert em.TrainConfig.from_dict(header["train_config"]) == cfg
    probe = np.random.default_rng(9).integers(0, 256, size=(6, 128, 128, 3), dtype=np.uint8)
    np.testing.assert_array_equal(em.embed(loaded, probe), em.embed(m, probe))
    assert loaded.model_id == m.model_id
    back = em.TrainHistory.from_json((tmp_path / "m.npz.history.json").read_text())
    assert back.records == hist.records and back.best_epoch == hist.best_epoch
    with np.load(path) as data:
        assert all(data[f"p{k}"].dtype == np.dtype("<f4") for k in range(len(header["param_names"])))


def test_load_rejects_foreign_file(tmp_path):
    bogus = tmp_path / "x.npz"
    np.savez(bogus, header=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        em.load_checkpoint(bogus)


def test_model_output_unbounded_linear_head():
    net = em.ColorNet()
    assert isinstance(net.head, torch.nn.Linear) and net.head.out_features == 64
