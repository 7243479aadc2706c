"""Patch embedding network, training loop and checkpoints.

The default backbone is a small strided CNN (six conv stages, global average
pooling, linear 64-unit head without output nonlinearity). Any ``nn.Module``
mapping ``(N, 3, 128, 128)`` in [0, 1] to ``(N, 64)`` can be registered in
``ARCHITECTURES`` and used instead.

Checkpoint container (``.npz``, i.e. a zip of ``.npy`` members):

* ``header``: UTF-8 JSON bytes with ``format``, ``version``, ``arch``
  (architecture descriptor), ``seed``, ``train_config`` and ``param_names``;
* ``p<k>``: the k-th parameter/buffer of the state dict as little-endian float32.

Training history goes into a JSON sidecar ``<checkpoint>.history.json``.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import batching, metricspace
from .evalkit.metrics import roc_auc
from .patchlab import PATCH_SIZE, FilterParams, Patch

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "chromaforge-checkpoint"
CHECKPOINT_VERSION = 1


class ColorNet(nn.Module):
    def __init__(self, channels=(8, 16, 32, 64, 64, 128), out_dim: int = metricspace.EMBED_DIM):
        super().__init__()
        layers, c_in = [], 3
        for c_out in channels:
            layers += [nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(c_in, out_dim)
        nn.init.xavier_uniform_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        return self.head(self.features(x).mean(dim=(2, 3)))


ARCHITECTURES = {"colornet": ColorNet}


@dataclass
class EmbeddingModel:
    net: nn.Module
    arch: dict
    seed: int = 0

    @property
    def model_id(self) -> str:
        h = hashlib.sha256()
        for name, t in self.net.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().astype("<f4").tobytes())
        return h.hexdigest()[:12]


def build_model(seed: int = 0, arch: str = "colornet", **kwargs) -> EmbeddingModel:
    torch.manual_seed(seed)
    net = ARCHITECTURES[arch](**kwargs)
    descriptor = {"name": arch, **{k: list(v) if isinstance(v, tuple) else v for k, v in kwargs.items()}}
    return EmbeddingModel(net.eval(), descriptor, seed)


def to_tensor(patches) -> torch.Tensor:
    if isinstance(patches, np.ndarray):
        arr = patches
    else:
        arr = np.stack([p.pixels if isinstance(p, Patch) else np.asarray(p) for p in patches])
    if arr.ndim != 4 or arr.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
        raise ValueError(f"expected (N, {PATCH_SIZE}, {PATCH_SIZE}, 3) patches, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).float().div_(255.0)


@torch.no_grad()
def embed(model: EmbeddingModel, patches, batch_size: int = 64) -> np.ndarray:
    """One float64 64-vector per patch; bitwise reproducible for a fixed ``batch_size``."""
    if len(patches) == 0:
        return np.zeros((0, metricspace.EMBED_DIM))
    model.net.eval()
    outs = []
    for start in range(0, len(patches), batch_size):
        outs.append(model.net(to_tensor(patches[start:start + batch_size])).double().numpy())
    return np.concatenate(outs)


def validation_roc_auc(D, gt) -> float:
    """ROC AUC of dissimilar-vs-similar pair distances over ``i0 > i1``."""
    D = np.asarray(D, dtype=np.float64)
    i0, i1 = metricspace.pair_indices(D.shape[0])
    return roc_auc(D[i0, i1], np.asarray(gt, dtype=bool)[i0, i1])


# ---------------------------------------------------------------------- training

@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    moment1: float = 0.9
    moment2: float = 0.999
    plateau_patience: int = 20
    lr_decay: float = 0.1
    max_epochs: int = 200
    eta: float = 0.5
    seed: int = 0
    n_val_batches: int = 4
    augment: bool = True
    batch: batching.BatchConfig = field(default_factory=batching.BatchConfig)
    filters: FilterParams = field(default_factory=FilterParams)

    def __post_init__(self):
        if min(self.learning_rate, self.moment1, self.moment2, self.lr_decay) <= 0:
            raise ValueError("rates must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")

    @property
    def early_stop_patience(self) -> int:
        return 2 * self.plateau_patience

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["batch"] = batching.BatchConfig(**d.get("batch", {}))
        d["filters"] = FilterParams(**d.get("filters", {}))
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float
    learning_rate: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def to_json(self) -> str:
        return json.dumps({"best_epoch": self.best_epoch,
                           "records": [dataclasses.asdict(r) for r in self.records]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainHistory":
        d = json.loads(text)
        return cls([EpochRecord(**r) for r in d["records"]], d["best_epoch"])


def _evaluate_batches(model: EmbeddingModel, batches, eta: float) -> tuple[float, float]:
    losses, dists, labels = [], [], []
    for b in batches:
        Y = embed(model, b.stacked())
        losses.append(metricspace.total_loss(Y, b.gt, eta))
        D = metricspace.pairwise_distances(Y)
        i0, i1 = metricspace.pair_indices(len(b))
        dists.append(D[i0, i1])
        labels.append(b.gt[i0, i1])
    return float(np.mean(losses)), roc_auc(np.concatenate(dists), np.concatenate(labels))


def train(model: EmbeddingModel, train_scenes, val_scenes, cfg: TrainConfig = TrainConfig(),
          log_every: int = 1):
    """Minimise histogram loss + orthogonal regularizer with Adam.

    The learning rate drops by ``lr_decay`` after ``plateau_patience`` epochs
    without validation-loss improvement; training stops after twice that many.
    Validation batches are drawn once (no augmentation) and reused. Returns the
    model carrying the best-validation-loss parameters and the history.
    """
    if not train_scenes or not val_scenes:
        raise ValueError("training and validation scene sets must be non-empty")
    train_ids = {s.scene_id for s in train_scenes}
    if train_ids & {s.scene_id for s in val_scenes}:
        raise ValueError("training and validation scenes must be disjoint")
    history = TrainHistory()
    if cfg.max_epochs <= 0:
        return model, history

    torch.manual_seed(cfg.seed)
    val_rng = np.random.default_rng([cfg.seed, 1])
    val_batches = []
    while len(val_batches) < cfg.n_val_batches:
        got = list(batching.sample_epoch(val_scenes, cfg.batch, val_rng, cfg.filters, augment_patches=False))
        if not got:
            raise ValueError("validation scenes yield no complete batch")
        val_batches.extend(got)
    val_batches = val_batches[:cfg.n_val_batches]

    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.moment1, cfg.moment2))
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(opt, mode="min", factor=cfg.lr_decay,
                                                       patience=cfg.plateau_patience)
    train_rng = np.random.default_rng([cfg.seed, 0])
    best_loss, best_state, since_best = np.inf, copy.deepcopy(net.state_dict()), 0

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        net.train()
        losses = []
        for batch in batching.sample_epoch(train_scenes, cfg.batch, train_rng, cfg.filters, cfg.augment):
            loss_fn = metricspace.TorchMetricLoss(batch.gt, cfg.eta)
            loss = loss_fn(net(to_tensor(batch.stacked())))
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        val_loss, val_auc = _evaluate_batches(model, val_batches, cfg.eta)
        sched.step(val_loss)
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), val_loss, val_auc,
                          opt.param_groups[0]["lr"], time.perf_counter() - t0)
        history.records.append(rec)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d train %.4f val %.4f auc %.4f lr %.1e (%.1fs)", epoch, rec.train_loss,
                        val_loss, val_auc, rec.learning_rate, rec.seconds)
        if val_loss < best_loss:
            best_loss, best_state, since_best = val_loss, copy.deepcopy(net.state_dict()), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                logger.info("early stop after epoch %d", epoch)
                break

    net.load_state_dict(best_state)
    net.eval()
    return model, history


# ------------------------------------------------------------------- checkpoints

def save_checkpoint(model: EmbeddingModel, path, cfg: TrainConfig | None = None,
                    history: TrainHistory | None = None) -> Path:
    path = Path(path)
    state = model.net.state_dict()
    names = list(state)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "seed": model.seed,
        "train_config": cfg.to_dict() if cfg is not None else None,
        "param_names": names,
    }
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for k, name in enumerate(names):
        arrays[f"p{k}"] = state[name].detach().cpu().numpy().astype("<f4")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    if history is not None:
        Path(str(path) + ".history.json").write_text(history.to_json() + "\n")
    return path


def load_checkpoint(path) -> tuple[EmbeddingModel, dict]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
        arch = dict(header["arch"])
        name = arch.pop("name")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in arch.items()}
        net = ARCHITECTURES[name](**kwargs)
        state = {n: torch.from_numpy(data[f"p{k}"].astype(np.float32)) for k, n in enumerate(header["param_names"])}
    net.load_state_dict(state)
    net.eval()
    return EmbeddingModel(net, header["arch"], header["seed"]), header
