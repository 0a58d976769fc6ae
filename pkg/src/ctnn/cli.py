"""Command-line pipeline: synth, build-tree, train, predict, eval, baseline.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baseline import fit_baseline, predict_baseline
from .hierarchy import PrecisionError, build_hierarchy, save_hierarchy
from .metrics import evaluate, report_from_confusion
from .model import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    NumericalError,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
    write_history_csv,
)
from .pipeline import SYNTH_CONFIG, predict_tile, tile_sample
from .raster import RasterError, load_raster, save_raster
from .synth import SynthParams, load_dataset, save_dataset, synth_dataset
from .topology import to_dot
from .topology.io import TreeFormatError

log = logging.getLogger("ctnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PRESETS = {"default": ModelConfig(), "synthetic": SYNTH_CONFIG}
RUN_KEYS = ("dataset", "train_tiles", "preset")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _model_flags(p: argparse.ArgumentParser, precisions_only: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--precisions", type=_floats, help="comma-separated, finest first")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    if precisions_only:
        return
    p.add_argument("--preset", choices=sorted(PRESETS), help="starting configuration: the published recipe (default) or the synthetic-tile one")
    p.add_argument("--conv-type", choices=("cheby", "diffusion", "none"))
    p.add_argument("--hops", type=_ints)
    p.add_argument("--channels", type=_ints)
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctnn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    s = add("build-tree", "build a contour-tree hierarchy from an elevation raster")
    s.add_argument("--elevation", type=Path, required=True)
    _model_flags(s, precisions_only=True)
    s.add_argument("--dot", type=Path, help="also write the level-0 tree as Graphviz DOT")
    s.add_argument("--out", type=Path, required=True)

    s = add("synth", "generate a synthetic flood dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--tiles", type=int, default=4)
    s.add_argument("--n-hills", type=int, default=12)
    s.add_argument("--water-level-quantile", type=float, default=0.35)
    s.add_argument("--occlusion-fraction", type=float, default=0.2)
    s.add_argument("--noise-sigma", type=float, default=0.5)
    s.add_argument("--label-precision", type=float, default=0.05)
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True)

    s = add("train", "train a model on a dataset")
    s.add_argument("--dataset", type=Path)
    s.add_argument("--train-tiles", type=int, help="use the first N tiles (default: all)")
    _model_flags(s)
    s.add_argument("--out", type=Path, required=True)

    s = add("predict", "predict a class raster")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--elevation", type=Path, required=True)
    s.add_argument("--features", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = add("eval", "compare a prediction raster with ground truth")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--truth", type=Path, required=True)
    s.add_argument("--out", type=Path, help="write the report as JSON (and a .txt table)")

    s = add("baseline", "per-pixel logistic-regression baseline")
    s.add_argument("--dataset", type=Path)
    s.add_argument("--train-tiles", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, required=True)
    return p


# --------------------------------------------------------------------------- config


def _read_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


def resolve_model_config(args, file_cfg: dict) -> ModelConfig:
    preset = getattr(args, "preset", None) or file_cfg.get("preset", "default")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}")
    d = PRESETS[preset].to_dict()
    d.update({k: v for k, v in file_cfg.items() if k not in RUN_KEYS})
    flags = {
        "seed": getattr(args, "seed", None),
        "precisions": getattr(args, "precisions", None),
        "connectivity": getattr(args, "connectivity", None),
        "conv_type": getattr(args, "conv_type", None),
        "hops": getattr(args, "hops", None),
        "channels": getattr(args, "channels", None),
        "epochs": getattr(args, "epochs", None),
    }
    explicit = {k for k, v in flags.items() if v is not None} | set(file_cfg)
    d.update({k: v for k, v in flags.items() if v is not None})
    d["L"] = len(d["precisions"]) - 1
    for k in ("hops", "channels"):
        if len(d[k]) != d["L"] + 1 and k not in explicit and len(d[k]) > d["L"]:
            d[k] = d[k][: d["L"] + 1]
    return ModelConfig.from_dict(d)


def _snapshot(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _dataset_path(args, file_cfg: dict) -> Path:
    ds = args.dataset or file_cfg.get("dataset")
    if ds is None:
        raise UsageError("no dataset given (use --dataset or a config file with 'dataset')")
    return Path(ds)


def _split(tiles: list, n: Optional[int]) -> tuple[list, list]:
    if n is None:
        return tiles, []
    if not 1 <= n <= len(tiles):
        raise UsageError(f"train_tiles must lie in [1, {len(tiles)}], got {n}")
    return tiles[:n], tiles[n:]


# --------------------------------------------------------------------------- commands


def cmd_build_tree(args) -> int:
    cfg = _read_config(args.config)
    precisions = args.precisions or cfg.get("precisions") or list(ModelConfig().precisions)
    connectivity = args.connectivity or cfg.get("connectivity", 4)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    grid = load_raster(args.elevation, "elevation")
    try:
        h = build_hierarchy(grid, precisions, connectivity, seed)
    except PrecisionError as exc:
        raise UsageError(str(exc))
    path = save_hierarchy(args.out, h)
    if args.dot:
        args.dot.write_text(to_dot(h.trees[0]))
    summary = {
        "elevation": str(args.elevation),
        "precisions": list(h.precisions),
        "connectivity": connectivity,
        "seed": seed,
        "node_counts": h.node_counts,
        "hierarchy": str(path),
    }
    _snapshot(_sibling(path, ".summary.json"), summary)
    for r, n in zip(h.precisions, h.node_counts):
        print(f"precision {r:g}: {n} nodes")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _read_config(args.config)
    d = {
        "size": args.size,
        "n_hills": args.n_hills,
        "water_level_quantile": args.water_level_quantile,
        "occlusion_fraction": args.occlusion_fraction,
        "noise_sigma": args.noise_sigma,
        "precision": args.label_precision,
    }
    d.update({k: v for k, v in cfg.items() if k in d})
    try:
        params = SynthParams(**d)
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.tiles < 1:
        raise UsageError("--tiles must be positive")
    tiles = synth_dataset(args.seed, args.tiles, params)
    path = save_dataset(args.out, tiles, args.seed, params)
    _snapshot(args.out / "resolved_config.json", {"command": "synth", "seed": args.seed, "tiles": args.tiles, **d})
    flood = np.mean([t.labels.classes.mean() for t in tiles])
    occ = np.mean([t.occlusion.mean() for t in tiles])
    print(f"wrote {len(tiles)} tiles to {path.parent} (flood {flood:.3f}, occluded {occ:.3f})")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = _read_config(args.config)
    config = resolve_model_config(args, file_cfg)
    ds = _dataset_path(args, file_cfg)
    _, tiles = load_dataset(ds)
    n_train = args.train_tiles if args.train_tiles is not None else file_cfg.get("train_tiles")
    train_tiles, _ = _split(tiles, n_train)
    samples = [tile_sample(t["elevation"], t["features"], t["labels"], config)[1] for t in train_tiles]
    model = build_model(config, train_tiles[0]["features"].bands, 2)
    train(model, samples, config, log=lambda r: log.info("epoch %(epoch)d loss %(loss).4f acc %(node_accuracy).4f", r))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.json")
    write_history_csv(out / "history.csv", model.history)
    _snapshot(
        out / "resolved_config.json",
        {"command": "train", "dataset": str(ds), "train_tiles": [t["name"] for t in train_tiles], "model": config.to_dict()},
    )
    if model.history:
        last = model.history[-1]
        print(f"trained {len(model.history)} epochs: loss {last['loss']:.4f}, node accuracy {last['node_accuracy']:.4f}")
    else:
        print("epochs=0: wrote the initial model")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    elevation = load_raster(args.elevation, "elevation")
    features = load_raster(args.features, "feature")
    pred = predict_tile(model, elevation, features)
    path = save_raster(args.out, pred)
    _snapshot(
        _sibling(path, ".config.json"),
        {"command": "predict", "checkpoint": str(args.checkpoint), "elevation": str(args.elevation),
         "features": str(args.features), "model": model.config.to_dict()},
    )
    print(f"wrote {pred.shape[0]}x{pred.shape[1]} prediction to {path}")
    return EXIT_OK


def _write_report(report, out: Optional[Path], extra: dict) -> None:
    print(report.table(), end="")
    if out is None:
        return
    out = out.with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    out.with_suffix(".txt").write_text(report.table())
    _snapshot(_sibling(out, ".config.json"), extra)


def cmd_eval(args) -> int:
    pred = load_raster(args.pred, "label")
    truth = load_raster(args.truth, "label")
    report = evaluate(pred, truth)
    _write_report(report, args.out, {"command": "eval", "pred": str(args.pred), "truth": str(args.truth)})
    return EXIT_OK


def cmd_baseline(args) -> int:
    file_cfg = _read_config(args.config)
    ds = _dataset_path(args, file_cfg)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    _, tiles = load_dataset(ds)
    n_train = args.train_tiles if args.train_tiles is not None else file_cfg.get("train_tiles")
    train_tiles, test_tiles = _split(tiles, n_train)
    scored = test_tiles or train_tiles
    clf = fit_baseline([t["features"] for t in train_tiles], [t["labels"] for t in train_tiles], seed)
    cm = sum(evaluate(predict_baseline(clf, t["features"]), t["labels"]).confusion for t in scored)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write_report(
        report_from_confusion(cm),
        out / "baseline_report.json",
        {"command": "baseline", "dataset": str(ds), "seed": seed,
         "train_tiles": [t["name"] for t in train_tiles], "scored_tiles": [t["name"] for t in scored]},
    )
    return EXIT_OK


COMMANDS = {
    "build-tree": cmd_build_tree,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, PrecisionError) as exc:
        print(f"ctnn {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"ctnn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RasterError, TreeFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"ctnn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
