"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training finished
without reaching the convergence tolerance (model is still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .dataset import augment_to_target, cross_validate, load_dataset
from .errors import DataError, ParameterError
from .hcs import compute_hcs, normalize_patch, save_descriptors
from .imaging import load_gray, save_gray
from .pipeline import PipelineConfig, detect_image, load_config, render_overlay
from .svm import load_model, train
from .synth import make_patch_records, make_scene


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mothscan", description="Moth detection in trap images")
    p.add_argument("--version", action="version", version=f"mothscan {__version__}")
    p.add_argument("--dump-config", action="store_true",
                   help="print the default config as JSON and exit")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", parents=[], help="fit an SVM on a patch dataset")
    t.add_argument("--data", required=True, type=Path, help="dataset root (positive/, negative/)")
    t.add_argument("--out", required=True, type=Path, help="model JSON path")
    t.add_argument("--config", type=Path, help="pipeline config JSON")
    t.add_argument("--augment-ratio", type=float, default=None,
                   help="positive-set growth factor (e.g. 4.795); default: config value")
    t.add_argument("--export-features", type=Path, default=None,
                   help="also write the training descriptors as label-first CSV")
    t.add_argument("--seed", type=int, default=None, help="override the SVM seed")

    e = sub.add_parser("evaluate", help="k-fold cross-validation on a patch dataset")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--config", type=Path)
    e.add_argument("--folds", type=int, default=None, help="override config fold count")
    e.add_argument("--augment-ratio", type=float, default=None)
    e.add_argument("--out", type=Path, default=None, help="write the results JSON here too")
    e.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("detect", help="detect and classify insects in one image")
    d.add_argument("--image", required=True, type=Path)
    d.add_argument("--model", required=True, type=Path)
    d.add_argument("--config", type=Path)
    d.add_argument("--json", type=Path, default=None, help="write the detection report here")
    d.add_argument("--overlay", type=Path, default=None, help="write an annotated PNG here")

    s = sub.add_parser("synth", help="generate a synthetic dataset and scenes")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--patches", type=int, default=100, help="patches per class")
    s.add_argument("--scenes", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    return cfg


def _load_records(args, cfg):
    records = load_dataset(args.data)
    ratio = args.augment_ratio if args.augment_ratio is not None else cfg.augment_ratio
    if ratio > 1.0:
        n_pos = sum(1 for r in records if r.label == 1)
        records = augment_to_target(records, int(round(ratio * n_pos)), cfg.augment_seed)
    return records


def _cmd_train(args) -> int:
    cfg = _config(args)
    records = _load_records(args, cfg)
    x = np.vstack([
        compute_hcs(normalize_patch(r.image, np.ones_like(r.image, dtype=bool), cfg.hcs), cfg.hcs)
        for r in records
    ])
    y = np.array([r.label for r in records])
    if args.export_features is not None:
        save_descriptors(args.export_features, x, y)
    seed = args.seed if args.seed is not None else cfg.svm_seed
    model = train(x, y, c=cfg.c, kernel=cfg.kernel, seed=seed)
    model.save(args.out)
    print(json.dumps({
        "model": str(args.out),
        "n_samples": len(records),
        "n_support": len(model.signed_alphas),
        "converged": model.converged,
        "config_hash": cfg.config_hash(),
    }, indent=2))
    return 0 if model.converged else 3


def _cmd_evaluate(args) -> int:
    cfg = _config(args)
    records = _load_records(args, cfg)
    folds = args.folds if args.folds is not None else cfg.folds
    results = cross_validate(records, folds, cfg.hcs, cfg.c, cfg.kernel, args.seed)
    text = json.dumps(results, indent=2)
    print(text)
    if args.out is not None:
        args.out.write_text(text + "\n")
    return 0


def _cmd_detect(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    img = load_gray(args.image)
    result = detect_image(img, model, cfg)
    report = json.dumps(result.to_dict(image_name=args.image.name, config=cfg), indent=2)
    print(report)
    if args.json is not None:
        args.json.write_text(report + "\n")
    if args.overlay is not None:
        Image.fromarray(render_overlay(img, result.detections)).save(args.overlay)
    return 0


def _cmd_synth(args) -> int:
    root = args.out
    (root / "patches" / "positive").mkdir(parents=True, exist_ok=True)
    (root / "patches" / "negative").mkdir(parents=True, exist_ok=True)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    records = make_patch_records(args.patches, args.patches, args.seed)
    for r in records:
        sub = "positive" if r.label == 1 else "negative"
        name = r.id.split("/")[-1] + ".png"
        save_gray(root / "patches" / sub / name, r.image)
    for i in range(args.scenes):
        img, truth = make_scene(args.seed * 1000 + i)
        save_gray(root / "scenes" / f"scene_{i:02d}.png", img)
        slim = {k: truth[k] for k in ("moths", "other_insects", "noise", "touching_groups")}
        (root / "scenes" / f"scene_{i:02d}_truth.json").write_text(
            json.dumps(slim, indent=2) + "\n"
        )
    print(json.dumps({
        "out": str(root),
        "patches_per_class": args.patches,
        "scenes": args.scenes,
    }, indent=2))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_config:
        print(PipelineConfig().to_json())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("mothscan: error: a subcommand is required", file=sys.stderr)
        return 1
    handler = {
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "detect": _cmd_detect,
        "synth": _cmd_synth,
    }[args.command]
    try:
        return handler(args)
    except ParameterError as exc:
        print(f"mothscan: parameter error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"mothscan: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
