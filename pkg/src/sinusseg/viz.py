"""Contour overlays for qualitative inspection of predictions."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_erosion

from .errors import PairingError

PRED_COLOR = (230, 60, 40)
GT_COLOR = (60, 200, 80)
BOTH_COLOR = (250, 220, 60)

_STRUCT = np.ones((3, 3), dtype=bool)


def _contour(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask).astype(bool)
    return m & ~binary_erosion(m, structure=_STRUCT, border_value=0)


def render_overlays(images, pred_masks, gt_masks, out_dir, ids=None) -> list:
    """Write one PNG per (image, prediction, ground truth) triple.

    Prediction contours are drawn red, ground-truth contours green, and
    pixels where both coincide yellow. Output dimensions match each
    source image; bytes are deterministic for fixed inputs.
    """
    n = len(images)
    if len(pred_masks) != n or len(gt_masks) != n:
        raise PairingError(
            f"misaligned sets: {n} images, {len(pred_masks)} predictions, "
            f"{len(gt_masks)} ground truths")
    if ids is None:
        ids = [f"{i:04d}" for i in range(n)]
    elif len(ids) != n:
        raise PairingError(f"{len(ids)} ids for {n} images")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for image_id, img, pred, gt in zip(ids, images, pred_masks, gt_masks):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != np.asarray(pred).shape or img.shape != np.asarray(gt).shape:
            raise PairingError(f"{image_id}: image {img.shape} vs masks "
                               f"{np.asarray(pred).shape}/{np.asarray(gt).shape}")
        gray = np.clip(img * 255.0, 0, 255).astype(np.uint8)
        rgb = np.stack([gray, gray, gray], axis=-1)
        pc = _contour(pred)
        gc = _contour(gt)
        rgb[pc & ~gc] = PRED_COLOR
        rgb[gc & ~pc] = GT_COLOR
        rgb[pc & gc] = BOTH_COLOR
        path = out_dir / f"{image_id}.png"
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
        paths.append(path)
    return paths
