"""Three-phase training pipeline.

Phase one trains a teacher on the labeled pool with the supervised loss
alone. Phase two freezes the teacher and turns its thresholded
predictions on unlabeled images into pseudo labels, optionally refined.
Phase three trains a student on labeled + unlabeled batches with the
combined objective: supervised + boundary-weighted distillation +
pseudo-label supervision.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoints import load_checkpoint, save_checkpoint
from .config import RunConfig, config_hash
from .data.masks import binarize, load_image, load_mask, save_mask
from .data.splits import SplitManifest
from .errors import ConfigError, DataError, TrainingDivergedError
from .losses import (
    LossParams,
    kd_weights,
    supervised_loss,
    total_loss,
    unsup_loss,
    weighted_kd_loss,
)
from .metrics import MetricReport, confusion, hd95_masks, overlap_metrics, score_pair
from .nets.backbone import build_backbone
from .refiner import refine_masks, train_refiner

log = logging.getLogger(__name__)

STEP_COLUMNS = ("step", "sup", "wkd", "unsup", "total", "mean_weight")


def _resize_image(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape == (size, size):
        return img.astype(np.float32)
    t = torch.from_numpy(img.astype(np.float32))[None, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0, 0].numpy()


def _resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    h, w = mask.shape
    if (h, w) == (size, size):
        return mask.astype(np.uint8)
    ri = np.minimum((np.arange(size) * (h / size)).astype(np.int64), h - 1)
    ci = np.minimum((np.arange(size) * (w / size)).astype(np.int64), w - 1)
    return mask[ri][:, ci].astype(np.uint8)


def _check_files(records, attr: str):
    missing = [r.image_id for r in records if not Path(getattr(r, attr)).exists()]
    if missing:
        raise DataError(f"missing {attr} for {len(missing)} record(s): {missing[:10]}")


def load_image_stack(records, size: int) -> np.ndarray:
    _check_files(records, "image_path")
    return np.stack([_resize_image(load_image(r.image_path), size) for r in records])


def load_mask_stack(records, size: int) -> np.ndarray:
    unmasked = [r.image_id for r in records if r.mask_path is None]
    if unmasked:
        raise DataError(f"records without masks: {unmasked[:10]}")
    _check_files(records, "mask_path")
    return np.stack([_resize_mask(load_mask(r.mask_path), size) for r in records])


def _build_optimizer(model, cfg: RunConfig):
    name = cfg.optimizer.name.lower()
    lr = cfg.optimizer.learning_rate
    wd = cfg.optimizer.weight_decay
    if name == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=wd)
    if name == "adam":
        return torch.optim.Adam(model.parameters(), lr=lr, weight_decay=wd)
    if name == "sgd":
        return torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9, weight_decay=wd)
    raise ConfigError(f"unknown optimizer {cfg.optimizer.name!r}")


def predict_logits(model, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = torch.from_numpy(images[start:start + batch_size].astype(np.float32))
            out.append(model(chunk[:, None])[:, 0].numpy())
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:], np.float32)


def predict_masks(model, images: np.ndarray, threshold: float = 0.5,
                  batch_size: int = 8) -> np.ndarray:
    logits = predict_logits(model, images, batch_size=batch_size)
    probs = 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))
    return binarize(probs, threshold)


def _mean_dice(model, images: np.ndarray, masks: np.ndarray, threshold: float) -> float:
    preds = predict_masks(model, images, threshold)
    vals = [overlap_metrics(confusion(p, g))["dice"] for p, g in zip(preds, masks)]
    return float(np.mean(vals))


def _diverged_checkpoint(out_dir, model, phase: str, epoch: int, step: int,
                         value: float, cfg: RunConfig):
    path = None
    if out_dir is not None:
        path = Path(out_dir) / "checkpoints" / f"{phase}_diverged.pt"
        save_checkpoint(path, {"model": model.state_dict()},
                        {"phase": phase, "epoch": epoch, "step": step,
                         "loss": value, "seed": cfg.seed})
    raise TrainingDivergedError(
        f"non-finite {phase} loss {value} at epoch {epoch} step {step}",
        checkpoint_path=None if path is None else str(path))


def train_teacher(manifest: SplitManifest, cfg: RunConfig, out_dir=None):
    """Train the supervised teacher; returns (frozen model, info dict).

    Selection follows mean validation Dice per epoch; if the manifest has
    no val split, the labeled training pool doubles as the selection set.
    """
    labeled = manifest.select("train", labeled=True)
    if not labeled:
        raise DataError("manifest has no labeled training samples")
    size = cfg.image_size
    images = load_image_stack(labeled, size)
    masks = load_mask_stack(labeled, size)
    val = manifest.select("val")
    if val:
        val_images = load_image_stack(val, size)
        val_masks = load_mask_stack(val, size)
    else:
        log.warning("no val split; selecting teacher checkpoint on training Dice")
        val_images, val_masks = images, masks

    model = build_backbone(cfg.backbone, seed=cfg.seed)
    opt = _build_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(labeled)
    bs = min(cfg.batch_size, n)
    thr = cfg.loss.threshold

    log_rows = []
    history = []
    best_dice, best_state, best_epoch = -1.0, None, 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            x = torch.from_numpy(images[idx][:, None])
            y = torch.from_numpy(masks[idx].astype(np.float32))
            logits = model(x)[:, 0]
            loss = supervised_loss(logits, y, eps=cfg.loss.dice_eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            v = loss.item()
            if not math.isfinite(v):
                _diverged_checkpoint(out_dir, model, "teacher", epoch, start // bs, v, cfg)
            losses.append(v)
        epoch_loss = float(np.mean(losses))
        val_dice = _mean_dice(model, val_images, val_masks, thr)
        history.append({"epoch": epoch, "loss": epoch_loss, "val_dice": val_dice})
        log_rows.append((epoch, f"{epoch_loss:.6f}", f"{val_dice:.6f}"))
        log.info("teacher epoch %d/%d loss=%.4f val_dice=%.4f",
                 epoch, cfg.epochs, epoch_loss, val_dice)
        if val_dice > best_dice:
            best_dice, best_epoch = val_dice, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    info = {"best_epoch": best_epoch, "best_val_dice": best_dice, "history": history}
    if out_dir is not None:
        out_dir = Path(out_dir)
        logs = out_dir / "logs"
        logs.mkdir(parents=True, exist_ok=True)
        with open(logs / "teacher_log.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "loss", "val_dice"))
            w.writerows(log_rows)
        save_checkpoint(out_dir / "checkpoints" / "teacher.pt",
                        {"model": model.state_dict()},
                        {"phase": "teacher", "seed": cfg.seed,
                         "config_hash": config_hash(cfg), "best_epoch": best_epoch,
                         "best_val_dice": best_dice,
                         "backbone": cfg.backbone.to_json()})
    return model, info


@dataclass
class PseudoLabelSet:
    """Teacher-derived labels for the unlabeled pool, aligned by position."""

    ids: list
    initial: np.ndarray  # (N, H, W) uint8
    teacher_checkpoint_id: str = ""
    refined: np.ndarray | None = None

    def __post_init__(self):
        if len(self.ids) != self.initial.shape[0]:
            raise DataError(f"{len(self.ids)} ids vs {self.initial.shape[0]} masks")
        if self.refined is not None and self.refined.shape != self.initial.shape:
            raise DataError(
                f"refined shape {self.refined.shape} vs initial {self.initial.shape}")

    def labels(self, refined: bool) -> np.ndarray:
        if not refined:
            return self.initial
        if self.refined is None:
            raise ConfigError("refined pseudo labels requested but none are attached")
        return self.refined


def generate_pseudo_labels(model, manifest: SplitManifest, cfg: RunConfig,
                           checkpoint_id: str = "") -> PseudoLabelSet:
    """Threshold the frozen teacher's predictions on every unlabeled image."""
    unl = manifest.select("train", labeled=False)
    if not unl:
        raise DataError("manifest has no unlabeled training samples")
    images = load_image_stack(unl, cfg.image_size)
    masks = predict_masks(model, images, cfg.loss.threshold, batch_size=cfg.batch_size)
    return PseudoLabelSet(ids=[r.image_id for r in unl], initial=masks,
                          teacher_checkpoint_id=checkpoint_id or config_hash(cfg))


def save_pseudo_set(ps: PseudoLabelSet, out_dir) -> Path:
    out_dir = Path(out_dir)
    entries = {}
    for kind in ("initial", "refined"):
        stack = getattr(ps, kind)
        if stack is None:
            continue
        (out_dir / kind).mkdir(parents=True, exist_ok=True)
        for i, image_id in enumerate(ps.ids):
            rel = f"{kind}/{image_id}.png"
            save_mask(stack[i], out_dir / rel)
            entries.setdefault(image_id, {"initial": None, "refined": None})[kind] = rel
    manifest_path = out_dir / "pseudo_manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"teacher_checkpoint_id": ps.teacher_checkpoint_id,
                   "ids": list(ps.ids), "entries": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_pseudo_set(out_dir) -> PseudoLabelSet:
    out_dir = Path(out_dir)
    manifest_path = out_dir / "pseudo_manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"missing pseudo-label manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    ids = payload["ids"]
    entries = payload["entries"]
    initial = np.stack([load_mask(out_dir / entries[i]["initial"]) for i in ids])
    refined = None
    if all(entries[i].get("refined") for i in ids):
        refined = np.stack([load_mask(out_dir / entries[i]["refined"]) for i in ids])
    return PseudoLabelSet(ids=ids, initial=initial,
                          teacher_checkpoint_id=payload.get("teacher_checkpoint_id", ""),
                          refined=refined)


def student_step_losses(student_logits: torch.Tensor, gt: torch.Tensor,
                        teacher_logits: torch.Tensor,
                        unl_logits: torch.Tensor | None,
                        pseudo: torch.Tensor | None,
                        p: LossParams, flags,
                        image_diagonal: float) -> dict:
    """All per-step student loss terms as tensors, plus the numpy weights.

    Pure function of its inputs so logged steps can be recomputed offline.
    """
    sup = supervised_loss(student_logits, gt, eps=p.dice_eps)
    batch = student_logits.shape[0]
    weights = np.ones(batch, dtype=np.float64)
    if flags.use_kd:
        if flags.use_weighting:
            with torch.no_grad():
                t_mask = binarize(torch.sigmoid(teacher_logits).numpy(), p.threshold)
                s_mask = binarize(torch.sigmoid(student_logits).numpy(), p.threshold)
            dists = [hd95_masks(t, s) for t, s in zip(t_mask, s_mask)]
            weights = kd_weights(dists, p.resolved_tau(image_diagonal))
        wkd = weighted_kd_loss(teacher_logits, student_logits, weights, p.temperature)
    else:
        wkd = student_logits.new_zeros(())
    if unl_logits is not None:
        unsup = unsup_loss(unl_logits, pseudo)
    else:
        unsup = student_logits.new_zeros(())
    return {"sup": sup, "wkd": wkd, "unsup": unsup,
            "total": total_loss(sup, wkd, unsup, p), "weights": weights}


def train_student(manifest: SplitManifest, pseudo: PseudoLabelSet | None,
                  teacher, cfg: RunConfig, out_dir=None):
    """Train the student against the frozen teacher; returns (model, info).

    Every optimization step draws one labeled batch (supervised +
    distillation terms) and, when unlabeled data is enabled, one
    unlabeled batch scored against its pseudo labels. Unlabeled batches
    cycle with wraparound so an epoch is one pass over the labeled set.
    """
    flags = cfg.flags
    labeled = manifest.select("train", labeled=True)
    if not labeled:
        raise DataError("manifest has no labeled training samples")
    if flags.use_refiner and not flags.use_unlabeled:
        raise ConfigError("use_refiner without use_unlabeled has nothing to refine")
    if flags.use_weighting and not flags.use_kd:
        log.warning("use_weighting without use_kd has no effect")

    size = cfg.image_size
    diagonal = float(np.hypot(size, size))
    images = load_image_stack(labeled, size)
    masks = load_mask_stack(labeled, size)
    val = manifest.select("val")
    if val:
        val_images = load_image_stack(val, size)
        val_masks = load_mask_stack(val, size)
    else:
        log.warning("no val split; selecting student checkpoint on training Dice")
        val_images, val_masks = images, masks

    unl_images = plabels = None
    if flags.use_unlabeled:
        unl_records = manifest.select("train", labeled=False)
        if not unl_records:
            raise DataError("use_unlabeled is set but the manifest has no unlabeled samples")
        if pseudo is None:
            raise ConfigError("use_unlabeled requires a pseudo-label set")
        by_id = {i: k for k, i in enumerate(pseudo.ids)}
        missing = [r.image_id for r in unl_records if r.image_id not in by_id]
        if missing:
            raise ConfigError(f"pseudo-label set lacks entries for: {missing[:10]}")
        order = [by_id[r.image_id] for r in unl_records]
        unl_images = load_image_stack(unl_records, size)
        plabels = pseudo.labels(refined=flags.use_refiner)[order]

    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    student = build_backbone(cfg.backbone, seed=cfg.seed + 1)
    opt = _build_optimizer(student, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = len(labeled)
    bs = min(cfg.batch_size, n)
    thr = cfg.loss.threshold

    u_order = u_ptr = None
    if flags.use_unlabeled:
        nu = unl_images.shape[0]
        ubs = min(cfg.batch_size, nu)
        u_order = rng.permutation(nu)
        u_ptr = 0

    step_rows = []
    history = []
    best_dice, best_state, best_epoch = -1.0, None, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        student.train()
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            idx = order[start:start + bs]
            x = torch.from_numpy(images[idx][:, None])
            y = torch.from_numpy(masks[idx].astype(np.float32))
            with torch.no_grad():
                t_logits = teacher(x)[:, 0]
            s_logits = student(x)[:, 0]

            u_logits = up = None
            if flags.use_unlabeled:
                if u_ptr + ubs > nu:
                    u_order = rng.permutation(nu)
                    u_ptr = 0
                uidx = u_order[u_ptr:u_ptr + ubs]
                u_ptr += ubs
                ux = torch.from_numpy(unl_images[uidx][:, None])
                up = torch.from_numpy(plabels[uidx].astype(np.float32))
                u_logits = student(ux)[:, 0]

            parts = student_step_losses(s_logits, y, t_logits, u_logits, up,
                                        cfg.loss, flags, diagonal)
            opt.zero_grad()
            parts["total"].backward()
            opt.step()

            step += 1
            sup_v = parts["sup"].item()
            wkd_v = parts["wkd"].item()
            unsup_v = parts["unsup"].item()
            total_v = (cfg.loss.alpha * sup_v + cfg.loss.beta * wkd_v
                       + (1.0 - cfg.loss.alpha) * unsup_v)
            if not all(math.isfinite(v) for v in (sup_v, wkd_v, unsup_v)):
                _diverged_checkpoint(out_dir, student, "student", epoch, step, total_v, cfg)
            step_rows.append((step, *(f"{v:.17g}" for v in (sup_v, wkd_v, unsup_v, total_v)),
                              f"{float(parts['weights'].mean()):.17g}"))

        val_dice = _mean_dice(student, val_images, val_masks, thr)
        history.append({"epoch": epoch, "val_dice": val_dice})
        log.info("student epoch %d/%d val_dice=%.4f", epoch, cfg.epochs, val_dice)
        if val_dice > best_dice:
            best_dice, best_epoch = val_dice, epoch
            best_state = copy.deepcopy(student.state_dict())

    student.load_state_dict(best_state)
    student.eval()
    info = {"best_epoch": best_epoch, "best_val_dice": best_dice,
            "history": history, "steps": step}
    if out_dir is not None:
        out_dir = Path(out_dir)
        logs = out_dir / "logs"
        logs.mkdir(parents=True, exist_ok=True)
        with open(logs / "student_steps.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(STEP_COLUMNS)
            w.writerows(step_rows)
        save_checkpoint(out_dir / "checkpoints" / "student.pt",
                        {"model": student.state_dict()},
                        {"phase": "student", "seed": cfg.seed,
                         "config_hash": config_hash(cfg), "best_epoch": best_epoch,
                         "best_val_dice": best_dice,
                         "backbone": cfg.backbone.to_json()})
    return student, info


def load_model(path, cfg: RunConfig):
    """Rebuild the backbone from config and load frozen weights."""
    state, _ = load_checkpoint(path)
    model = build_backbone(cfg.backbone, seed=cfg.seed)
    model.load_state_dict(state["model"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def evaluate_model(model, records, cfg: RunConfig) -> MetricReport:
    """Per-image overlap and boundary metrics of a model over records."""
    if not records:
        raise DataError("no records to evaluate")
    images = load_image_stack(records, cfg.image_size)
    gts = load_mask_stack(records, cfg.image_size)
    preds = predict_masks(model, images, cfg.loss.threshold, batch_size=cfg.batch_size)
    per = {r.image_id: score_pair(p, g, boundary_only=cfg.eval_boundary_only)
           for r, p, g in zip(records, preds, gts)}
    return MetricReport(per_image=per)


def run_pipeline(manifest: SplitManifest, cfg: RunConfig, out_dir=None,
                 cache: dict | None = None) -> dict:
    """Run teacher, pseudo labels, optional refiner, and student end to end.

    cache (optional) shares phase outputs between runs that only differ
    in flags or loss weights: the teacher and initial pseudo labels do
    not depend on them, and the refiner depends only on use_cbam.
    """
    cache = cache if cache is not None else {}
    out_dir = None if out_dir is None else Path(out_dir)

    if "teacher" in cache:
        teacher, teacher_info = cache["teacher"]
    else:
        teacher, teacher_info = train_teacher(manifest, cfg, out_dir)
        cache["teacher"] = (teacher, teacher_info)

    pseudo = None
    if cfg.flags.use_unlabeled:
        if "pseudo" in cache:
            pseudo = cache["pseudo"]
        else:
            pseudo = generate_pseudo_labels(teacher, manifest, cfg)
            cache["pseudo"] = pseudo
        if cfg.flags.use_refiner:
            key = ("refiner", cfg.flags.use_cbam)
            if key in cache:
                bundle = cache[key]
            else:
                labeled = manifest.select("train", labeled=True)
                noisy = predict_masks(teacher, load_image_stack(labeled, cfg.image_size),
                                      cfg.loss.threshold, batch_size=cfg.batch_size)
                clean = load_mask_stack(labeled, cfg.image_size)
                refiner_dir = None if out_dir is None else out_dir / "logs"
                bundle = train_refiner(noisy.astype(np.float32),
                                       clean.astype(np.float32), cfg, refiner_dir)
                cache[key] = bundle
            refined = refine_masks(bundle, pseudo.initial, cfg)
            pseudo = PseudoLabelSet(ids=pseudo.ids, initial=pseudo.initial,
                                    teacher_checkpoint_id=pseudo.teacher_checkpoint_id,
                                    refined=refined)
        if out_dir is not None:
            save_pseudo_set(pseudo, out_dir / "pseudo_labels")

    student, student_info = train_student(manifest, pseudo, teacher, cfg, out_dir)

    test = manifest.select("test")
    result = {"teacher": teacher, "student": student,
              "teacher_info": teacher_info, "student_info": student_info}
    if test:
        result["teacher_report"] = evaluate_model(teacher, test, cfg)
        result["student_report"] = evaluate_model(student, test, cfg)
        if out_dir is not None:
            result["teacher_report"].save(out_dir / "reports" / "teacher_test.json")
            result["student_report"].save(out_dir / "reports" / "student_test.json")
    return result


TABLE2_ROWS = (
    ("baseline", dict(use_unlabeled=False, use_kd=False, use_weighting=False,
                      use_refiner=False, use_cbam=False)),
    ("kd_labeled_only", dict(use_unlabeled=False, use_kd=True, use_weighting=False,
                             use_refiner=False, use_cbam=False)),
    ("kd_with_unlabeled", dict(use_unlabeled=True, use_kd=True, use_weighting=False,
                               use_refiner=False, use_cbam=False)),
    ("refined_no_cbam", dict(use_unlabeled=True, use_kd=False, use_weighting=False,
                             use_refiner=True, use_cbam=False)),
    ("refined_cbam", dict(use_unlabeled=True, use_kd=False, use_weighting=False,
                          use_refiner=True, use_cbam=True)),
    ("weighted_kd", dict(use_unlabeled=True, use_kd=True, use_weighting=True,
                         use_refiner=False, use_cbam=False)),
    ("full", dict(use_unlabeled=True, use_kd=True, use_weighting=True,
                  use_refiner=True, use_cbam=True)),
)

TABLE3_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)


def ablate(manifest: SplitManifest, cfg: RunConfig, out_dir,
           suites=("table2", "table3")) -> dict:
    """Run the component grid and the loss-weight sweep on one split.

    Every cell shares the manifest (hence the test set), the seed, and
    every hyperparameter except the cell's own flags or alpha. Returns
    {cell name: aggregate metrics} and writes one report per cell plus a
    combined CSV table.
    """
    out_dir = Path(out_dir)
    cells = []
    if "table2" in suites:
        for name, flag_values in TABLE2_ROWS:
            cells.append((f"table2/{name}", replace(cfg, flags=replace(cfg.flags, **flag_values))))
    if "table3" in suites:
        for alpha in TABLE3_ALPHAS:
            cells.append((f"table3/alpha_{alpha:.1f}",
                          replace(cfg, loss=replace(cfg.loss, alpha=alpha))))
    if not cells:
        raise ConfigError(f"no known suites in {suites!r}")

    cache: dict = {}
    summary = {}
    for name, cell_cfg in cells:
        log.info("ablation cell %s", name)
        result = run_pipeline(manifest, cell_cfg, out_dir=None, cache=cache)
        report = result["student_report"]
        report.provenance = {"cell": name, "flags": vars(cell_cfg.flags).copy(),
                             "alpha": cell_cfg.loss.alpha, "seed": cell_cfg.seed}
        report.save(out_dir / name / "report.json")
        summary[name] = report.aggregate

    table_path = out_dir / "ablation_table.csv"
    keys = sorted(next(iter(summary.values())).keys())
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", *keys])
        for name, agg in summary.items():
            w.writerow([name, *(f"{agg[k]:.6f}" for k in keys)])
    with open(out_dir / "ablation_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
