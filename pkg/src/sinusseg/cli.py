"""Command-line entry point.

Every training phase reads one YAML config and a run directory. The run
directory accumulates: config.yaml (snapshot, written before any
computation), split_manifest.json, checkpoints/, pseudo_labels/,
refined_labels/, reports/, logs/. Phases skip work already stamped with
the current config digest; --force redoes it.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoints as ckpt_io
from .config import RunConfig, config_hash, load_config, save_config
from .data.masks import load_mask, save_mask
from .data.phantom import generate_phantom_dataset
from .data.splits import (
    SampleRecord,
    SplitManifest,
    build_split_manifest,
    load_manifest,
    save_manifest,
)
from .data.via import parse_via_csv, parse_via_metadata, rasterize_annotations
from .distill import (
    ablate,
    evaluate_model,
    generate_pseudo_labels,
    load_image_stack,
    load_mask_stack,
    load_model,
    load_pseudo_set,
    predict_masks,
    save_pseudo_set,
    train_student,
    train_teacher,
)
from .errors import ConfigError, DataError, SinussegError
from .metrics import evaluate_dataset
from .refiner import load_refiner, refine_masks, save_refiner, train_refiner
from .viz import render_overlays

log = logging.getLogger(__name__)


def _load_run_config(args) -> RunConfig:
    return load_config(args.config)


def _snapshot_config(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    snap = run_dir / "config.yaml"
    if snap.exists():
        old = load_config(snap)
        if config_hash(old) != config_hash(cfg):
            if not force:
                raise ConfigError(
                    f"{snap} holds a different configuration; pass --force to replace it")
            log.warning("replacing config snapshot in %s", run_dir)
    save_config(cfg, snap)


def _run_manifest(run_dir: Path):
    path = run_dir / "split_manifest.json"
    if not path.exists():
        raise ConfigError(f"missing split manifest: {path} (run the split subcommand first)")
    return load_manifest(path)


def _phase_done(path: Path, cfg: RunConfig) -> bool:
    side = ckpt_io.sidecar_path(path)
    if not path.exists() or not side.exists():
        return False
    with open(side, encoding="utf-8") as fh:
        meta = json.load(fh)
    return meta.get("config_hash") == config_hash(cfg)


def cmd_make_phantoms(args) -> int:
    manifest = generate_phantom_dataset(args.count, args.size, args.seed, args.out)
    save_manifest(manifest, Path(args.out) / "manifest.json")
    print(f"wrote {args.count} phantom pairs to {args.out}")
    return 0


def cmd_ingest_via(args) -> int:
    annotations = parse_via_csv(args.csv)
    metadata_by_file = parse_via_metadata(args.csv)
    images_dir = Path(args.images)
    out_dir = Path(args.out)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    by_image: dict = {}
    for ann in annotations:
        by_image.setdefault(ann.image_id, []).append(ann)

    missing = [i for i in by_image if not (images_dir / i).exists()]
    if missing:
        raise DataError(f"annotated images not found under {images_dir}: {missing[:10]}")

    records = []
    for image_id in sorted(by_image):
        image_path = images_dir / image_id
        with Image.open(image_path) as im:
            width, height = im.size
        mask = rasterize_annotations(by_image[image_id], width, height)
        mask_path = out_dir / "masks" / f"{Path(image_id).stem}.png"
        save_mask(mask, mask_path)
        records.append(SampleRecord(image_id=Path(image_id).stem, image_path=image_path,
                                    mask_path=mask_path, labeled=True, split="train",
                                    metadata=metadata_by_file.get(image_id, {})))
    save_manifest(SplitManifest(records=records, seed=0), out_dir / "manifest.json")
    print(f"ingested {len(records)} annotated images into {out_dir}")
    return 0


def cmd_split(args) -> int:
    source = load_manifest(args.manifest)
    ratios = {"labeled_fraction": args.labeled_fraction,
              "val_count": args.val, "test_count": args.test}
    manifest = build_split_manifest(source.records, ratios, args.seed)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_manifest(manifest, run_dir / "split_manifest.json")
    print(f"split counts: {manifest.counts}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    _snapshot_config(cfg, run_dir, args.force)
    manifest = _run_manifest(run_dir)
    ckpt = run_dir / "checkpoints" / "teacher.pt"
    if _phase_done(ckpt, cfg) and not args.force:
        print(f"teacher checkpoint up to date: {ckpt}")
        return 0
    _, info = train_teacher(manifest, cfg, run_dir)
    print(f"teacher best val dice {info['best_val_dice']:.4f} "
          f"(epoch {info['best_epoch']}) -> {ckpt}")
    return 0


def _require_teacher(run_dir: Path, cfg: RunConfig):
    ckpt = run_dir / "checkpoints" / "teacher.pt"
    if not ckpt.exists():
        raise ConfigError(f"missing teacher checkpoint: {ckpt} (run train-teacher first)")
    return load_model(ckpt, cfg)


def cmd_gen_pseudo(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    _snapshot_config(cfg, run_dir, args.force)
    manifest = _run_manifest(run_dir)
    out = run_dir / "pseudo_labels"
    marker = out / "pseudo_manifest.json"
    if marker.exists() and not args.force:
        with open(marker, encoding="utf-8") as fh:
            if json.load(fh).get("teacher_checkpoint_id") == config_hash(cfg):
                print(f"pseudo labels up to date: {out}")
                return 0
    teacher = _require_teacher(run_dir, cfg)
    pseudo = generate_pseudo_labels(teacher, manifest, cfg)
    save_pseudo_set(pseudo, out)
    print(f"wrote {len(pseudo.ids)} pseudo labels to {out}")
    return 0


def cmd_train_refiner(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    _snapshot_config(cfg, run_dir, args.force)
    manifest = _run_manifest(run_dir)
    ckpt = run_dir / "checkpoints" / "refiner.pt"
    if _phase_done(ckpt, cfg) and not args.force:
        print(f"refiner checkpoint up to date: {ckpt}")
        return 0
    teacher = _require_teacher(run_dir, cfg)
    labeled = manifest.select("train", labeled=True)
    images = load_image_stack(labeled, cfg.image_size)
    noisy = predict_masks(teacher, images, cfg.loss.threshold, batch_size=cfg.batch_size)
    clean = load_mask_stack(labeled, cfg.image_size)
    bundle = train_refiner(noisy.astype(np.float32), clean.astype(np.float32),
                           cfg, run_dir / "logs")
    save_refiner(bundle, ckpt, {"phase": "refiner", "seed": cfg.seed,
                                "config_hash": config_hash(cfg),
                                "epochs": cfg.refiner.epochs})
    print(f"refiner trained on {len(labeled)} pairs -> {ckpt}")
    return 0


def cmd_refine(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    _snapshot_config(cfg, run_dir, args.force)
    ckpt = run_dir / "checkpoints" / "refiner.pt"
    if not ckpt.exists():
        raise ConfigError(f"missing refiner checkpoint: {ckpt} (run train-refiner first)")
    pseudo = load_pseudo_set(run_dir / "pseudo_labels")
    out = run_dir / "refined_labels"
    marker = out / "refined_manifest.json"
    if marker.exists() and not args.force:
        with open(marker, encoding="utf-8") as fh:
            if json.load(fh).get("config_hash") == config_hash(cfg):
                print(f"refined labels up to date: {out}")
                return 0
    bundle = load_refiner(ckpt, cfg)
    refined = refine_masks(bundle, pseudo.initial, cfg, batch_size=cfg.batch_size)
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for i, image_id in enumerate(pseudo.ids):
        rel = f"{image_id}.png"
        save_mask(refined[i], out / rel)
        entries[image_id] = rel
    with open(marker, "w", encoding="utf-8") as fh:
        json.dump({"config_hash": config_hash(cfg), "ids": list(pseudo.ids),
                   "entries": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(pseudo.ids)} refined labels to {out}")
    return 0


def _load_pseudo_for(cfg: RunConfig, run_dir: Path):
    if not cfg.flags.use_unlabeled:
        return None
    pseudo = load_pseudo_set(run_dir / "pseudo_labels")
    if cfg.flags.use_refiner:
        marker = run_dir / "refined_labels" / "refined_manifest.json"
        if not marker.exists():
            raise ConfigError(f"missing refined-label manifest: {marker} (run refine first)")
        with open(marker, encoding="utf-8") as fh:
            payload = json.load(fh)
        base = run_dir / "refined_labels"
        refined = np.stack([load_mask(base / payload["entries"][i]) for i in pseudo.ids])
        pseudo.refined = refined
    return pseudo


def cmd_train_student(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    _snapshot_config(cfg, run_dir, args.force)
    manifest = _run_manifest(run_dir)
    ckpt = run_dir / "checkpoints" / "student.pt"
    if _phase_done(ckpt, cfg) and not args.force:
        print(f"student checkpoint up to date: {ckpt}")
        return 0
    teacher = _require_teacher(run_dir, cfg)
    pseudo = _load_pseudo_for(cfg, run_dir)
    student, info = train_student(manifest, pseudo, teacher, cfg, run_dir)
    test = manifest.select("test")
    if test:
        report = evaluate_model(student, test, cfg)
        report.provenance = {"phase": "student", "config_hash": config_hash(cfg),
                             "seed": cfg.seed}
        report.save(run_dir / "reports" / "student_test.json")
        print(f"student test dice {report.aggregate['dice']:.4f} "
              f"hd95 {report.aggregate['hd95']:.2f}")
    print(f"student best val dice {info['best_val_dice']:.4f} "
          f"(epoch {info['best_epoch']}) -> {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    if args.pred and args.gt:
        report = evaluate_dataset(args.pred, args.gt)
    elif args.config and args.run_dir:
        cfg = _load_run_config(args)
        run_dir = Path(args.run_dir)
        manifest = _run_manifest(run_dir)
        ckpt = run_dir / "checkpoints" / f"{args.phase}.pt"
        if not ckpt.exists():
            raise ConfigError(f"missing checkpoint: {ckpt}")
        model = load_model(ckpt, cfg)
        test = manifest.select("test")
        if not test:
            raise ConfigError("manifest has no test split")
        report = evaluate_model(model, test, cfg)
        report.provenance = {"phase": args.phase, "config_hash": config_hash(cfg)}
    else:
        raise ConfigError("evaluate needs either --pred and --gt, or --config and --run-dir")
    if args.out:
        report.save(args.out)
    agg = " ".join(f"{k}={v:.4f}" for k, v in sorted(report.aggregate.items()))
    print(agg)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    _snapshot_config(cfg, run_dir, args.force)
    manifest = _run_manifest(run_dir)
    suites = ("table2", "table3") if args.suite == "all" else (args.suite,)
    summary = ablate(manifest, cfg, run_dir / "reports" / "ablation", suites=suites)
    for name, agg in summary.items():
        print(f"{name}: dice={agg['dice']:.4f} hd95={agg['hd95']:.2f}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(args.run_dir)
    manifest = _run_manifest(run_dir)
    ckpt = run_dir / "checkpoints" / f"{args.phase}.pt"
    if not ckpt.exists():
        raise ConfigError(f"missing checkpoint: {ckpt}")
    model = load_model(ckpt, cfg)
    test = manifest.select("test")
    if not test:
        raise ConfigError("manifest has no test split")
    images = load_image_stack(test, cfg.image_size)
    gts = load_mask_stack(test, cfg.image_size)
    preds = predict_masks(model, images, cfg.loss.threshold, batch_size=cfg.batch_size)
    out = Path(args.out) if args.out else run_dir / "reports" / "overlays"
    paths = render_overlays(images, preds, gts, out, ids=[r.image_id for r in test])
    print(f"wrote {len(paths)} overlays to {out}")
    return 0


def _add_config_run(p, force=True):
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--run-dir", required=True, help="run directory")
    if force:
        p.add_argument("--force", action="store_true",
                       help="redo the phase even if outputs look current")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sinusseg",
                                     description="semi-supervised boundary-aware segmentation")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantoms", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_phantoms)

    p = sub.add_parser("ingest-via", help="rasterize polygon annotations to masks")
    p.add_argument("--csv", required=True, help="annotation CSV export")
    p.add_argument("--images", required=True, help="directory holding the images")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_ingest_via)

    p = sub.add_parser("split", help="build a train/val/test split manifest")
    p.add_argument("--manifest", required=True, help="source dataset manifest")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--labeled-fraction", type=float, required=True)
    p.add_argument("--val", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-teacher", help="train the supervised teacher")
    _add_config_run(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("gen-pseudo", help="teacher predictions for the unlabeled pool")
    _add_config_run(p)
    p.set_defaults(func=cmd_gen_pseudo)

    p = sub.add_parser("train-refiner", help="train the mask refiner")
    _add_config_run(p)
    p.set_defaults(func=cmd_train_refiner)

    p = sub.add_parser("refine", help="refine the pseudo labels")
    _add_config_run(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train-student", help="train the student with the combined objective")
    _add_config_run(p)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", help="directory of predicted masks")
    p.add_argument("--gt", help="directory of ground-truth masks")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--run-dir", help="run directory")
    p.add_argument("--phase", choices=("teacher", "student"), default="student")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the component grid and weight sweep")
    _add_config_run(p)
    p.add_argument("--suite", choices=("table2", "table3", "all"), default="all")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render contour overlays for the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--phase", choices=("teacher", "student"), default="student")
    p.add_argument("--out", help="overlay output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except SinussegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
