"""Refiner training loop contracts on tiny synthetic mask stacks."""

import csv
import logging

import numpy as np
import pytest
import torch

from sinusseg.config import RefinerConfig, RunConfig
from sinusseg.errors import DataError, ShapeError
from sinusseg.losses import refiner_total_loss
from sinusseg.refiner import (
    LOSS_COLUMNS,
    build_refiner,
    load_refiner,
    refine_masks,
    refine_pseudo_labels,
    save_refiner,
    train_refiner,
)


def tiny_config(seed=0, epochs=2, resolution=32):
    return RunConfig(
        seed=seed,
        refiner=RefinerConfig(
            epochs=epochs, batch_size=4, resolution=resolution,
            learning_rate=1e-3, base_channels=4, n_res_blocks=1,
            disc_channels=4, correction_base_channels=4,
        ),
    )


def disc_masks(rng, n, size):
    """Random filled discs, one per sample."""
    out = np.zeros((n, size, size), dtype=np.uint8)
    yy, xx = np.mgrid[0:size, 0:size]
    for i in range(n):
        cy, cx = rng.integers(size // 4, 3 * size // 4, 2)
        r = rng.integers(size // 8, size // 4)
        out[i] = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8)
    return out


def bundle_params(bundle):
    return {f"{name}.{k}": v.clone() for name, m in bundle.modules().items()
            for k, v in m.state_dict().items()}


def test_build_refiner_has_six_networks_and_is_seeded():
    cfg = tiny_config(seed=5)
    a = bundle_params(build_refiner(cfg))
    b = bundle_params(build_refiner(cfg))
    assert set(m for m in build_refiner(cfg).modules()) == {
        "g_ab", "g_ba", "d_a", "d_b", "c_a", "c_b"}
    assert all(torch.equal(a[k], b[k]) for k in a)


def test_cbam_flag_changes_correction_nets():
    from sinusseg.nets import CBAM

    on = build_refiner(tiny_config())
    cfg_off = tiny_config()
    cfg_off.flags.use_cbam = False
    off = build_refiner(cfg_off)
    assert any(isinstance(m, CBAM) for m in on.c_b.modules())
    assert not any(isinstance(m, CBAM) for m in off.c_b.modules())


def test_train_refiner_determinism(tmp_path):
    rng = np.random.default_rng(0)
    noisy = disc_masks(rng, 8, 32)
    clean = disc_masks(rng, 8, 32)
    cfg = tiny_config(seed=3, epochs=2)
    first = bundle_params(train_refiner(noisy, clean, cfg, tmp_path / "run1"))
    second = bundle_params(train_refiner(noisy, clean, cfg, tmp_path / "run2"))
    assert set(first) == set(second)
    for key in first:
        assert torch.equal(first[key], second[key]), key


def test_train_refiner_loss_csv(tmp_path):
    rng = np.random.default_rng(1)
    noisy = disc_masks(rng, 8, 32)
    clean = disc_masks(rng, 8, 32)
    cfg = tiny_config(seed=1, epochs=3)
    train_refiner(noisy, clean, cfg, tmp_path)
    with open(tmp_path / "refiner_losses.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOSS_COLUMNS
    assert len(rows) == 1 + 3
    lam = cfg.loss.lambda_cycle
    for i, row in enumerate(rows[1:], start=1):
        assert int(row[0]) == i
        adv_ab, adv_ba, cyc, corr, total = map(float, row[1:])
        assert total == refiner_total_loss(adv_ab, adv_ba, cyc, corr, lam)


def test_train_refiner_input_validation():
    cfg = tiny_config()
    with pytest.raises(ShapeError):
        train_refiner(np.zeros((2, 32, 32)), np.zeros((3, 32, 32)), cfg)
    with pytest.raises(ShapeError):
        train_refiner(np.zeros((32, 32)), np.zeros((32, 32)), cfg)
    with pytest.raises(DataError):
        train_refiner(np.zeros((0, 32, 32)), np.zeros((0, 32, 32)), cfg)


def test_identical_domains_cycle_loss_drops(tmp_path):
    drops = 0
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        masks = disc_masks(rng, 10, 32)
        cfg = tiny_config(seed=seed, epochs=8)
        cfg.refiner.learning_rate = 2e-3
        out = tmp_path / f"seed{seed}"
        train_refiner(masks, masks.copy(), cfg, out)
        with open(out / "refiner_losses.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        if float(rows[-1]["cycle"]) < float(rows[0]["cycle"]):
            drops += 1
    assert drops >= 2


def test_refine_outputs_binary_same_shape(tmp_path):
    rng = np.random.default_rng(2)
    noisy = disc_masks(rng, 6, 32)
    clean = disc_masks(rng, 6, 32)
    cfg = tiny_config(seed=2, epochs=1)
    bundle = train_refiner(noisy, clean, cfg, tmp_path)
    refined = refine_pseudo_labels(bundle, noisy, cfg)
    assert refined.shape == noisy.shape
    assert refined.dtype == np.uint8
    assert set(np.unique(refined)) <= {0, 1}


def test_refine_resolution_mismatch():
    cfg = tiny_config()
    bundle = build_refiner(cfg)
    with pytest.raises(ShapeError, match="32x32"):
        refine_pseudo_labels(bundle, np.zeros((2, 64, 64), dtype=np.uint8), cfg)
    with pytest.raises(ShapeError):
        refine_pseudo_labels(bundle, np.zeros((32, 32), dtype=np.uint8), cfg)


def test_refine_all_background_logged(caplog):
    cfg = tiny_config()
    bundle = build_refiner(cfg)
    stack = np.zeros((3, 32, 32), dtype=np.uint8)
    with caplog.at_level(logging.WARNING, logger="sinusseg.refiner"):
        refined = refine_pseudo_labels(bundle, stack, cfg)
    assert refined.shape == stack.shape
    assert set(np.unique(refined)) <= {0, 1}
    assert any("all-background" in r.message for r in caplog.records)


def test_refine_masks_resamples_round_trip():
    rng = np.random.default_rng(3)
    cfg = tiny_config()
    bundle = build_refiner(cfg)
    stack = disc_masks(rng, 4, 48)  # not the working resolution
    refined = refine_masks(bundle, stack, cfg)
    assert refined.shape == stack.shape
    assert set(np.unique(refined)) <= {0, 1}


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    noisy = disc_masks(rng, 6, 32)
    clean = disc_masks(rng, 6, 32)
    cfg = tiny_config(seed=7, epochs=1)
    bundle = train_refiner(noisy, clean, cfg, tmp_path / "train")
    path = tmp_path / "refiner.pt"
    save_refiner(bundle, path, {"seed": 7})
    loaded = load_refiner(path, cfg)
    before = refine_pseudo_labels(bundle, noisy, cfg)
    after = refine_pseudo_labels(loaded, noisy, cfg)
    np.testing.assert_array_equal(before, after)
