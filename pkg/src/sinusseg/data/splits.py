"""Sample records and train/val/test split manifests.

A manifest is the single source of truth for which images a run may see,
which of them count as labeled, and how they are partitioned. Splits are
disjoint by image_id and fully determined by (records, ratios, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, CountError, FormatError

SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    """One dataset item: an image, its optional mask, and clinical metadata."""

    image_id: str
    image_path: Path
    mask_path: Path | None = None
    labeled: bool = False
    split: str = "train"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.image_path = Path(self.image_path)
        if self.mask_path is not None:
            self.mask_path = Path(self.mask_path)
        if self.labeled != (self.mask_path is not None):
            raise FormatError(
                f"{self.image_id}: labeled={self.labeled} but mask_path={self.mask_path}"
            )
        if self.split not in SPLITS:
            raise FormatError(f"{self.image_id}: unknown split {self.split!r}")
        if not self.labeled and self.split != "train":
            raise FormatError(f"{self.image_id}: split {self.split!r} requires a mask")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "image_path": str(self.image_path),
            "mask_path": None if self.mask_path is None else str(self.mask_path),
            "labeled": self.labeled,
            "split": self.split,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SampleRecord":
        return cls(
            image_id=obj["image_id"],
            image_path=obj["image_path"],
            mask_path=obj.get("mask_path"),
            labeled=obj["labeled"],
            split=obj["split"],
            metadata=obj.get("metadata") or {},
        )


@dataclass
class SplitManifest:
    records: list[SampleRecord]
    seed: int
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise FormatError(f"duplicate image_ids across splits: {dupes[:5]}")
        tallies = self.tally()
        if not self.counts:
            self.counts = tallies
        elif self.counts != tallies:
            raise FormatError(f"manifest counts {self.counts} do not match records {tallies}")

    def tally(self) -> dict:
        return {
            "train_labeled": sum(r.split == "train" and r.labeled for r in self.records),
            "train_unlabeled": sum(r.split == "train" and not r.labeled for r in self.records),
            "val": sum(r.split == "val" for r in self.records),
            "test": sum(r.split == "test" for r in self.records),
        }

    def select(self, split: str, labeled: bool | None = None) -> list[SampleRecord]:
        out = [r for r in self.records if r.split == split]
        if labeled is not None:
            out = [r for r in out if r.labeled == labeled]
        return out


def build_split_manifest(records, ratios: dict, seed: int) -> SplitManifest:
    """Partition records into disjoint test/val/train(+labeled/unlabeled) sets.

    ratios carries labeled_fraction (of the train split), val_count and
    test_count. Records without a mask can only become unlabeled training
    samples; val/test and the labeled subset are drawn from masked records.
    Deterministic for fixed (records, ratios, seed).
    """
    val_count = int(ratios["val_count"])
    test_count = int(ratios["test_count"])
    labeled_fraction = float(ratios["labeled_fraction"])
    if not 0.0 <= labeled_fraction <= 1.0:
        raise ConfigError(f"labeled_fraction must be in [0,1], got {labeled_fraction}")

    by_id = sorted(records, key=lambda r: r.image_id)
    if len(by_id) < val_count + test_count:
        raise CountError(
            f"need at least {val_count + test_count} records for val+test, have {len(by_id)}"
        )

    rng = np.random.default_rng(seed)
    masked = [r for r in by_id if r.mask_path is not None]
    unmasked = [r for r in by_id if r.mask_path is None]
    if len(masked) < val_count + test_count:
        raise CountError(
            f"need {val_count + test_count} masked records for val+test, have {len(masked)}"
        )

    masked = [masked[i] for i in rng.permutation(len(masked))]
    test = masked[:test_count]
    val = masked[test_count:test_count + val_count]
    train_pool = masked[test_count + val_count:] + unmasked

    n_train = len(train_pool)
    n_labeled = int(round(labeled_fraction * n_train))
    masked_train = [r for r in train_pool if r.mask_path is not None]
    if n_labeled > len(masked_train):
        raise CountError(
            f"labeled_fraction asks for {n_labeled} labeled train records, "
            f"only {len(masked_train)} have masks"
        )
    labeled_ids = {r.image_id for r in
                   (masked_train[i] for i in rng.permutation(len(masked_train))[:n_labeled])}

    out = []
    for rec, split in [(r, "test") for r in test] + [(r, "val") for r in val]:
        out.append(SampleRecord(rec.image_id, rec.image_path, rec.mask_path,
                                labeled=True, split=split, metadata=rec.metadata))
    for rec in train_pool:
        keep = rec.image_id in labeled_ids
        out.append(SampleRecord(rec.image_id, rec.image_path,
                                rec.mask_path if keep else None,
                                labeled=keep, split="train", metadata=rec.metadata))
    out.sort(key=lambda r: r.image_id)
    return SplitManifest(records=out, seed=seed)


def save_manifest(manifest: SplitManifest, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": manifest.seed,
        "counts": manifest.counts,
        "records": [r.to_json() for r in manifest.records],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> SplitManifest:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return SplitManifest(
        records=[SampleRecord.from_json(o) for o in payload["records"]],
        seed=payload["seed"],
        counts=payload.get("counts") or {},
    )
