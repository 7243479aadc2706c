import hashlib
import json
import os
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # lets test modules import ``oracles``

# Desk-scale training run used by the acceptance suite. Changing any of these
# invalidates cached models.
TRAIN_SCENES = 144  # 128 for training, 16 held out for validation
TRAIN_SIZE = 384
TRAIN_SEED = 0
TRAIN_CONFIG = "[train]\nmax_epochs = 60\n"

ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail=""):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class TrainedRun:
    def __init__(self, model_path, seconds, cached):
        from chromaforge import embedder

        self.path = Path(model_path)
        self.model, self.header = embedder.load_checkpoint(self.path)
        hist = Path(str(self.path) + ".history.json").read_text()
        self.history = embedder.TrainHistory.from_json(hist)
        self.seconds = seconds
        self.cached = cached


def _train(workdir: Path) -> float:
    from chromaforge import cli

    workdir.mkdir(parents=True, exist_ok=True)
    cfg = workdir / "run.ini"
    cfg.write_text(TRAIN_CONFIG)
    t0 = time.perf_counter()
    assert cli.main(["synth", "--scenes", str(TRAIN_SCENES), "--size", str(TRAIN_SIZE),
                     "--seed", str(TRAIN_SEED), "--out", str(workdir / "data")]) == 0
    assert cli.main(["train", "--data", str(workdir / "data"), "--config", str(cfg),
                     "--out", str(workdir / "model.npz")]) == 0
    return time.perf_counter() - t0


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """The desk-scale model. Reused across sessions when CHROMAFORGE_CACHE is set."""
    key = hashlib.sha256(f"{TRAIN_SCENES}|{TRAIN_SIZE}|{TRAIN_SEED}|{TRAIN_CONFIG}".encode()).hexdigest()[:16]
    cache = os.environ.get("CHROMAFORGE_CACHE")
    workdir = Path(cache) / f"acceptance_{key}" if cache else tmp_path_factory.mktemp("acceptance")
    timing = workdir / "timing.json"
    if cache and timing.is_file() and (workdir / "model.npz").is_file():
        return TrainedRun(workdir / "model.npz", json.loads(timing.read_text())["seconds"], True)
    seconds = _train(workdir)
    timing.write_text(json.dumps({"seconds": seconds}))
    return TrainedRun(workdir / "model.npz", seconds, False)
