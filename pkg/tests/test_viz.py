"""Overlay rendering: file count, dimensions, determinism, pairing errors."""

import numpy as np
import pytest
from PIL import Image

from sinusseg.errors import PairingError
from sinusseg.viz import BOTH_COLOR, GT_COLOR, PRED_COLOR, render_overlays


def make_triples(n, size, seed):
    rng = np.random.default_rng(seed)
    images = [rng.random((size, size)) for _ in range(n)]
    preds = [(rng.random((size, size)) > 0.6).astype(np.uint8) for _ in range(n)]
    gts = [(rng.random((size, size)) > 0.6).astype(np.uint8) for _ in range(n)]
    return images, preds, gts


def test_one_png_per_triple(tmp_path):
    images, preds, gts = make_triples(4, 32, seed=0)
    paths = render_overlays(images, preds, gts, tmp_path / "ov")
    assert len(paths) == 4
    for p in paths:
        assert p.exists()
        assert p.suffix == ".png"
    assert sorted((tmp_path / "ov").iterdir()) == sorted(paths)


def test_output_dimensions_match_source(tmp_path):
    rng = np.random.default_rng(3)
    images = [rng.random((40, 56))]
    preds = [(rng.random((40, 56)) > 0.5).astype(np.uint8)]
    gts = [(rng.random((40, 56)) > 0.5).astype(np.uint8)]
    (path,) = render_overlays(images, preds, gts, tmp_path)
    with Image.open(path) as im:
        assert im.size == (56, 40)
        assert im.mode == "RGB"


def test_deterministic_bytes(tmp_path):
    images, preds, gts = make_triples(2, 32, seed=7)
    first = render_overlays(images, preds, gts, tmp_path / "a")
    second = render_overlays(images, preds, gts, tmp_path / "b")
    for pa, pb in zip(first, second):
        assert pa.read_bytes() == pb.read_bytes()


def test_contour_colors_present(tmp_path):
    size = 32
    img = np.zeros((size, size))
    pred = np.zeros((size, size), dtype=np.uint8)
    gt = np.zeros((size, size), dtype=np.uint8)
    pred[8:20, 8:20] = 1
    gt[8:20, 8:24] = 1
    (path,) = render_overlays([img], [pred], [gt], tmp_path)
    arr = np.asarray(Image.open(path))
    flat = arr.reshape(-1, 3)
    for color in (PRED_COLOR, GT_COLOR, BOTH_COLOR):
        assert (flat == np.array(color)).all(axis=1).any()


def test_custom_ids_name_files(tmp_path):
    images, preds, gts = make_triples(2, 16, seed=1)
    paths = render_overlays(images, preds, gts, tmp_path, ids=["left", "right"])
    assert [p.name for p in paths] == ["left.png", "right.png"]


def test_misaligned_counts_rejected(tmp_path):
    images, preds, gts = make_triples(3, 16, seed=2)
    with pytest.raises(PairingError):
        render_overlays(images, preds[:2], gts, tmp_path)
    with pytest.raises(PairingError):
        render_overlays(images, preds, gts, tmp_path, ids=["only-one"])


def test_shape_mismatch_names_id(tmp_path):
    rng = np.random.default_rng(5)
    images = [rng.random((16, 16))]
    preds = [(rng.random((24, 24)) > 0.5).astype(np.uint8)]
    gts = [(rng.random((16, 16)) > 0.5).astype(np.uint8)]
    with pytest.raises(PairingError, match="bad-id"):
        render_overlays(images, preds, gts, tmp_path, ids=["bad-id"])
