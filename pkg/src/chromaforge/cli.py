"""Command-line entry point: ``chromaforge <command> ...``."""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import batching, colorpipe, embedder, imaging, localizer
from .evalkit import benchmark, degradation, evaluation, robustness
from .patchlab import FilterParams

logger = logging.getLogger("chromaforge")

# Robustness test scenes are drawn from their own seed range.
ROBUSTNESS_SEED_BASE = 200_000_000
SYNTH_SEED_STRIDE = 100_000


class UsageError(Exception):
    pass


# ------------------------------------------------------------------------ config

@dataclasses.dataclass
class DataConfig:
    val_scenes: int = 16


@dataclasses.dataclass
class RunConfig:
    train: embedder.TrainConfig
    data: DataConfig


_SECTIONS = {
    "train": (embedder.TrainConfig, {"batch", "filters"}),
    "batch": (batching.BatchConfig, set()),
    "filters": (FilterParams, set()),
    "data": (DataConfig, set()),
}


def _convert(text: str, default):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_config(text: str = "") -> RunConfig:
    """Parse an INI-style config. Missing keys keep their defaults; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise UsageError(f"unknown config section [{section}]")
        cls, skip = _SECTIONS[section]
        defaults = cls()
        names = {f.name for f in dataclasses.fields(cls)} - skip
        kw = {}
        for key, raw in cp.items(section):
            if key not in names:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            try:
                kw[key] = _convert(raw, getattr(defaults, key))
            except ValueError as e:
                raise UsageError(f"bad value for {section}.{key}: {e}") from None
        values[section] = kw
    try:
        train = embedder.TrainConfig(**values.get("train", {}),
                                     batch=batching.BatchConfig(**values.get("batch", {})),
                                     filters=FilterParams(**values.get("filters", {})))
        data = DataConfig(**values.get("data", {}))
    except ValueError as e:
        raise UsageError(str(e)) from None
    return RunConfig(train, data)


def default_config_text() -> str:
    """The full default configuration, one key per line."""
    cfg = parse_config()
    lines = []
    for section, obj in (("train", cfg.train), ("batch", cfg.train.batch), ("filters", cfg.train.filters),
                         ("data", cfg.data)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            if section == "train" and f.name in ("batch", "filters"):
                continue
            lines.append(f"{f.name} = {getattr(obj, f.name)}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {out}: {e.strerror}") from None
    for i in range(args.scenes):
        scene = colorpipe.synthesize_scene(args.seed * SYNTH_SEED_STRIDE + i, args.size, args.size)
        colorpipe.write_scene_dir(out, scene)
    print(f"wrote {args.scenes} scenes to {out}")
    return 0


def _split_scenes(scene_dirs, n_val: int, seed: int):
    if n_val < 1 or n_val >= len(scene_dirs):
        raise UsageError(f"need more than val_scenes={n_val} scenes, found {len(scene_dirs)}")
    order = np.random.default_rng([seed, 2]).permutation(len(scene_dirs))
    val = sorted(int(k) for k in order[:n_val])
    train = sorted(int(k) for k in order[n_val:])
    return [scene_dirs[k] for k in train], [scene_dirs[k] for k in val]


def cmd_train(args) -> int:
    data = Path(args.data)
    if not data.is_dir():
        raise UsageError(f"no dataset directory {data}")
    text = Path(args.config).read_text() if args.config else ""
    cfg = parse_config(text)
    scene_dirs = colorpipe.list_scene_dirs(data)
    train_dirs, val_dirs = _split_scenes(scene_dirs, cfg.data.val_scenes, cfg.train.seed)
    train_scenes = [colorpipe.load_scene(d) for d in train_dirs]
    val_scenes = [colorpipe.load_scene(d) for d in val_dirs]
    model = embedder.build_model(cfg.train.seed)
    model, history = embedder.train(model, train_scenes, val_scenes, cfg.train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    embedder.save_checkpoint(model, out, cfg.train, history)
    best = history.records[history.best_epoch] if history.best_epoch is not None else None
    if best is not None:
        print(f"best epoch {best.epoch}: val loss {best.val_loss:.4f} val AUC {best.val_auc:.4f}")
    print(f"model {model.model_id} saved to {out}")
    return 0


def _analysis_size(value: int):
    return None if value == 0 else value


def cmd_analyze(args) -> int:
    image = imaging.read_image(args.image)
    model, _ = embedder.load_checkpoint(args.model)
    report = localizer.analyze(image, model, stride=args.stride, aggregation=args.agg,
                               analysis_size=_analysis_size(args.analysis_size))
    localizer.write_heatmap(args.out, report)
    if args.overlay:
        plot_overlay(image, report.heatmap.values, Path(args.out).with_name(Path(args.out).name + "_overlay.png"))
    print(repr(report.detection_score))
    return 0


def cmd_splice(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    items = benchmark.build_spliced_dataset(args.n, args.seed, args.size, args.size, args.segmentation)
    benchmark.write_spliced_dataset(args.out, items)
    print(f"wrote {len(items)} spliced items to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    root = Path(args.dataset)
    if not (root / "index.json").is_file():
        raise UsageError(f"{root} is not a spliced dataset (index.json missing)")
    items = benchmark.read_spliced_dataset(root)
    model, _ = embedder.load_checkpoint(args.model)
    spec = degradation.variant(args.variant)
    report = evaluation.evaluate_items(model, items, spec, args.agg, _analysis_size(args.analysis_size),
                                       jobs=args.jobs)
    prefix = Path(args.out) if args.out else root / f"eval_{args.variant}_{args.agg}"
    prefix.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(prefix.with_suffix(".csv"))
    report.to_json(prefix.with_suffix(".json"))
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    return 0


def robustness_scenes(n: int, seed: int, size: int):
    return [colorpipe.synthesize_scene(ROBUSTNESS_SEED_BASE + seed * SYNTH_SEED_STRIDE + i, size, size)
            for i in range(n)]


def cmd_robustness(args) -> int:
    model, _ = embedder.load_checkpoint(args.model)
    scenes = robustness_scenes(args.scenes, args.seed, args.size)
    grid = robustness.robustness_grid(model, scenes, mode=args.mode, lab_min=args.lab_min, n_pairs=args.pairs,
                                      n_patches=args.patches, seed=args.seed, jobs=args.jobs)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(prefix.with_suffix(".csv"))
    robustness.plot_grid(grid, prefix.with_suffix(".png"))
    print(prefix.with_suffix(".csv").read_text(), end="")
    return 0


def cmd_config(args) -> int:
    print(default_config_text(), end="")
    return 0


def plot_overlay(image, heat, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    axes[0].imshow(image)
    axes[1].imshow(heat, vmin=0, vmax=1, cmap="magma")
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


# ------------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chromaforge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress (epochs, skipped scenes)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for per-image/per-cell work")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic multi-pipeline scene dataset")
    s.add_argument("--scenes", type=int, required=True, help="number of scenes, 12 developed images each")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=384, help="scene height and width in pixels")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train an embedding model on a synthetic dataset")
    s.add_argument("--data", required=True, help="directory written by synth")
    s.add_argument("--config", default=None, help="INI file; see the config command")
    s.add_argument("--out", required=True, help="checkpoint path (.npz)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("analyze", help="heatmap and detection score for one image")
    s.add_argument("--image", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--agg", choices=("medoid", "meanshift"), default="medoid")
    s.add_argument("--out", required=True, help="output prefix for .png/.f32/.json")
    s.add_argument("--stride", type=int, default=32, help="patch stride in pixels")
    s.add_argument("--analysis-size", type=int, default=localizer.ANALYSIS_LARGER_DIM,
                   help="larger image side used for analysis; 0 keeps the native size")
    s.add_argument("--overlay", action="store_true", help="also write <out>_overlay.png")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("splice", help="build the synthetic splicing benchmark")
    s.add_argument("--n", type=int, default=50, help="number of spliced items")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=512, help="image height and width in pixels")
    s.add_argument("--segmentation", choices=("fh", "rect"), default="fh",
                   help="graph-based segments or the fast rectangle fallback")
    s.set_defaults(func=cmd_splice)

    s = sub.add_parser("evaluate", help="localization/detection metrics on a spliced benchmark")
    s.add_argument("--dataset", required=True, help="directory written by splice")
    s.add_argument("--model", required=True)
    s.add_argument("--variant", choices=sorted(degradation.VARIANTS), default="hq")
    s.add_argument("--agg", choices=("medoid", "meanshift"), default="medoid")
    s.add_argument("--analysis-size", type=int, default=0,
                   help="larger image side used for analysis; 0 (default) keeps the native size")
    s.add_argument("--out", default=None, help="output prefix for .csv/.json")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("robustness", help="TPR@5%%FAR grid over resize x JPEG degradations")
    s.add_argument("--model", required=True)
    s.add_argument("--mode", choices=robustness.MODES, default="diff-scene")
    s.add_argument("--lab-min", type=float, default=0.0, choices=(0.0, 20.0, 50.0),
                   help="same-scene only: minimum Lab distance between co-located patches")
    s.add_argument("--scenes", type=int, default=24, help="synthetic scenes to draw pairs from")
    s.add_argument("--pairs", type=int, default=50, help="image pairs per grid")
    s.add_argument("--patches", type=int, default=50, help="patches per image")
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix for .csv/.png")
    s.set_defaults(func=cmd_robustness)

    s = sub.add_parser("config", help="print the default configuration file")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"chromaforge: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, configparser.Error) as e:
        print(f"chromaforge: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
