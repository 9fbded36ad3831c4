"""Overlap and boundary metrics between binary masks.

Per-direction distances use exact nearest-neighbour lookups (cKDTree),
so results agree with an O(N*M) brute-force scan to float precision.
The 95th percentile is taken per direction with linear interpolation
between order statistics, then the two directions are combined with max.

Empty-set conventions keep every metric total: if exactly one point set
is empty the distance is the image diagonal (worst plausible boundary
error), if both are empty it is 0; overlap ratios on two empty masks
are 1.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial import cKDTree

from .errors import PairingError, ShapeError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact pixelwise confusion counts between two equal-size masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    p = pred > 0
    g = gt > 0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def overlap_metrics(c: ConfusionCounts) -> dict:
    """Dice, recall and precision from confusion counts.

    0/0 cases resolve to 1.0 when both masks are empty and 0.0 otherwise.
    """
    both_empty = c.tp == 0 and c.fp == 0 and c.fn == 0

    def ratio(num, den):
        if den == 0:
            return 1.0 if both_empty else 0.0
        return num / den

    return {
        "dice": ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "recall": ratio(c.tp, c.tp + c.fn),
        "precision": ratio(c.tp, c.tp + c.fp),
    }


def foreground_points(mask: np.ndarray, boundary_only: bool = False) -> np.ndarray:
    """(row, col) coordinates of foreground pixels, optionally boundary only."""
    mask = np.asarray(mask) > 0
    if boundary_only:
        eroded = binary_erosion(mask, structure=np.ones((3, 3), dtype=bool), border_value=0)
        mask = mask & ~eroded
    return np.argwhere(mask)


def _directed_min_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    tree = cKDTree(np.asarray(dst, dtype=np.float64))
    d, _ = tree.query(np.asarray(src, dtype=np.float64), k=1)
    return np.atleast_1d(d)


def percentile_hausdorff(u: np.ndarray, v: np.ndarray, q: float,
                         image_diagonal: float) -> float:
    """max over directions of the q-th percentile of point-to-set distances.

    q = 100 recovers the classic Hausdorff distance.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1, 2) if np.size(u) else np.empty((0, 2))
    v = np.asarray(v, dtype=np.float64).reshape(-1, 2) if np.size(v) else np.empty((0, 2))
    if len(u) == 0 and len(v) == 0:
        return 0.0
    if len(u) == 0 or len(v) == 0:
        return float(image_diagonal)
    fwd = np.percentile(_directed_min_distances(u, v), q)
    bwd = np.percentile(_directed_min_distances(v, u), q)
    return float(max(fwd, bwd))


def hd95(u: np.ndarray, v: np.ndarray, image_diagonal: float) -> float:
    """95th-percentile Hausdorff distance between two pixel coordinate sets."""
    return percentile_hausdorff(u, v, 95.0, image_diagonal)


def hd95_masks(pred: np.ndarray, gt: np.ndarray, boundary_only: bool = False) -> float:
    """hd95 between the foreground point sets of two equal-size masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    diagonal = float(np.hypot(*pred.shape))
    return hd95(foreground_points(pred, boundary_only),
                foreground_points(gt, boundary_only), diagonal)


@dataclass
class MetricReport:
    """Per-image and aggregate metrics plus run provenance."""

    per_image: dict
    aggregate: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate and self.per_image:
            keys = next(iter(self.per_image.values())).keys()
            self.aggregate = {
                k: float(np.mean([m[k] for m in self.per_image.values()])) for k in keys
            }

    def to_json(self) -> dict:
        return {"per_image": self.per_image, "aggregate": self.aggregate,
                "provenance": self.provenance}

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "MetricReport":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(per_image=obj["per_image"], aggregate=obj["aggregate"],
                   provenance=obj.get("provenance") or {})


def score_pair(pred: np.ndarray, gt: np.ndarray, boundary_only: bool = False) -> dict:
    """All per-image metrics for one prediction/ground-truth pair."""
    scores = overlap_metrics(confusion(pred, gt))
    distance = hd95_masks(pred, gt, boundary_only=boundary_only)
    diagonal = float(np.hypot(*np.asarray(gt).shape))
    scores["hd95"] = distance
    scores["hd95_norm"] = distance / diagonal
    return scores


def evaluate_dataset(pred_dir, gt_dir, provenance: dict | None = None,
                     boundary_only: bool = False) -> MetricReport:
    """Score every matching PNG pair of two directories."""
    from .data.masks import load_mask

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pred_names = {p.name for p in pred_dir.glob("*.png")}
    gt_names = {p.name for p in gt_dir.glob("*.png")}
    if pred_names != gt_names:
        missing_gt = sorted(pred_names - gt_names)
        missing_pred = sorted(gt_names - pred_names)
        parts = []
        if missing_gt:
            parts.append(f"no ground truth for {missing_gt}")
        if missing_pred:
            parts.append(f"no prediction for {missing_pred}")
        raise PairingError("; ".join(parts))
    if not pred_names:
        raise PairingError(f"no PNG files found in {pred_dir}")

    per_image = {}
    for name in sorted(pred_names):
        pred = load_mask(pred_dir / name)
        gt = load_mask(gt_dir / name)
        per_image[Path(name).stem] = score_pair(pred, gt, boundary_only=boundary_only)
    return MetricReport(per_image=per_image, provenance=provenance or {})
