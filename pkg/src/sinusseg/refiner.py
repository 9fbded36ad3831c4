"""Cycle-consistent mask refiner.

Two generators translate between noisy predicted masks (domain A) and
clean reference masks (domain B); patch discriminators score each
domain; two correction networks learn to undo what the translation
misses, using the paired samples. Refinement at inference is
binarize(sigmoid(C_B(G_AB(noisy)))).
"""

from __future__ import annotations

import csv
import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoints import load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import DataError, ShapeError, TrainingDivergedError
from .losses import (
    correction_loss,
    cycle_loss,
    lsgan_discriminator_loss,
    lsgan_generator_loss,
    refiner_total_loss,
)
from .nets.correction import CorrectionNetSpec, build_correction_net
from .nets.cyclegan import build_cyclegan_pair

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "adv_ab", "adv_ba", "cycle", "corr", "total")


@dataclass
class RefinerBundle:
    g_ab: torch.nn.Module
    g_ba: torch.nn.Module
    d_a: torch.nn.Module
    d_b: torch.nn.Module
    c_a: torch.nn.Module
    c_b: torch.nn.Module

    def modules(self) -> dict:
        return {"g_ab": self.g_ab, "g_ba": self.g_ba, "d_a": self.d_a,
                "d_b": self.d_b, "c_a": self.c_a, "c_b": self.c_b}

    def eval(self):
        for m in self.modules().values():
            m.eval()
        return self


def _correction_spec(cfg: RunConfig) -> CorrectionNetSpec:
    stages = frozenset({2, 3, 4}) if cfg.flags.use_cbam else frozenset()
    return CorrectionNetSpec(base_channels=cfg.refiner.correction_base_channels,
                             cbam_stages=stages)


def build_refiner(cfg: RunConfig) -> RefinerBundle:
    r = cfg.refiner
    g_ab, g_ba, d_a, d_b = build_cyclegan_pair(
        base_channels=r.base_channels, n_res_blocks=r.n_res_blocks,
        disc_channels=r.disc_channels, seed=cfg.seed)
    spec = _correction_spec(cfg)
    c_a = build_correction_net(spec, seed=cfg.seed + 1)
    c_b = build_correction_net(spec, seed=cfg.seed + 2)
    return RefinerBundle(g_ab, g_ba, d_a, d_b, c_a, c_b)


def _resize_nearest(batch: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize of an (N, H, W) stack to (N, size, size)."""
    n, h, w = batch.shape
    if h == size and w == size:
        return batch
    ri = np.minimum((np.arange(size) * (h / size)).astype(np.int64), h - 1)
    ci = np.minimum((np.arange(size) * (w / size)).astype(np.int64), w - 1)
    return batch[:, ri][:, :, ci]


def _to_tensor(batch: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch[:, None].astype(np.float32)))


def train_refiner(noisy: np.ndarray, clean: np.ndarray, cfg: RunConfig,
                  out_dir=None) -> RefinerBundle:
    """Train the refiner on paired (noisy, clean) mask stacks.

    noisy and clean are (N, H, W) arrays with values in [0, 1] and the
    same ordering, so row i of each is the same underlying sample. The
    adversarial and cycle terms deliberately re-pair the two domains
    through independent shuffles; only the correction term sees the
    true pairing. out_dir, when given, receives the per-epoch loss CSV
    and any divergence checkpoint.
    """
    if noisy.shape != clean.shape:
        raise ShapeError(f"noisy {noisy.shape} vs clean {clean.shape}")
    if noisy.ndim != 3:
        raise ShapeError(f"expected (N, H, W) mask stacks, got ndim={noisy.ndim}")
    if noisy.shape[0] == 0:
        raise DataError("refiner needs at least one mask pair")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    res = cfg.refiner.resolution
    a_all = _resize_nearest(noisy.astype(np.float32), res)
    b_all = _resize_nearest(clean.astype(np.float32), res)
    n = a_all.shape[0]
    bs = min(cfg.refiner.batch_size, n)
    lam = cfg.loss.lambda_cycle

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    bundle = build_refiner(cfg)
    lr = cfg.refiner.learning_rate
    if lr is None:
        lr = cfg.optimizer.learning_rate
    betas = cfg.refiner.adam_betas
    g_opt = torch.optim.AdamW(
        list(bundle.g_ab.parameters()) + list(bundle.g_ba.parameters()), lr=lr, betas=betas)
    d_opt = torch.optim.AdamW(
        list(bundle.d_a.parameters()) + list(bundle.d_b.parameters()), lr=lr, betas=betas)
    c_opt = torch.optim.AdamW(
        list(bundle.c_a.parameters()) + list(bundle.c_b.parameters()), lr=lr, betas=betas)

    csv_path = None
    if out_dir is not None:
        csv_path = out_dir / "refiner_losses.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(LOSS_COLUMNS)

    for epoch in range(1, cfg.refiner.epochs + 1):
        perm_pair = rng.permutation(n)
        perm_b = rng.permutation(n)
        n_steps = max(1, n // bs)
        sums = np.zeros(4, dtype=np.float64)
        for step in range(n_steps):
            sl = slice(step * bs, step * bs + bs)
            a = _to_tensor(a_all[perm_pair[sl]])
            b_pair = _to_tensor(b_all[perm_pair[sl]])
            b_unp = _to_tensor(b_all[perm_b[sl]])

            fake_b = bundle.g_ab(a)
            fake_a = bundle.g_ba(b_unp)

            d_loss = (lsgan_discriminator_loss(bundle.d_b(b_unp), bundle.d_b(fake_b.detach()))
                      + lsgan_discriminator_loss(bundle.d_a(a), bundle.d_a(fake_a.detach())))
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()

            adv_ab = lsgan_generator_loss(bundle.d_b(fake_b))
            adv_ba = lsgan_generator_loss(bundle.d_a(fake_a))
            cyc = cycle_loss(bundle.g_ba(fake_b), a, bundle.g_ab(fake_a), b_unp)
            g_loss = adv_ab + adv_ba + lam * cyc
            g_opt.zero_grad()
            g_loss.backward()
            g_opt.step()

            with torch.no_grad():
                fb_pair = bundle.g_ab(a)
                fa_pair = bundle.g_ba(b_pair)
            corr = correction_loss(bundle.c_b(fb_pair), b_pair, bundle.c_a(fa_pair), a)
            c_opt.zero_grad()
            corr.backward()
            c_opt.step()

            vals = np.array([adv_ab.item(), adv_ba.item(), cyc.item(), corr.item()])
            if not np.all(np.isfinite(vals)):
                ckpt_dir = out_dir if out_dir is not None else Path(tempfile.mkdtemp())
                ckpt = ckpt_dir / "refiner_diverged.pt"
                save_checkpoint(ckpt, {k: m.state_dict() for k, m in bundle.modules().items()},
                                {"epoch": epoch, "step": step, "seed": cfg.seed,
                                 "losses": vals.tolist()})
                raise TrainingDivergedError(
                    f"non-finite refiner loss at epoch {epoch} step {step}: {vals}",
                    checkpoint_path=str(ckpt))
            sums += vals

        means = sums / n_steps
        total = refiner_total_loss(means[0], means[1], means[2], means[3], lam)
        if csv_path is not None:
            with open(csv_path, "a", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerow([epoch, *(f"{v:.17g}" for v in means), f"{total:.17g}"])
        log.info("refiner epoch %d/%d adv_ab=%.4f adv_ba=%.4f cycle=%.4f corr=%.4f total=%.4f",
                 epoch, cfg.refiner.epochs, *means, total)

    return bundle


def save_refiner(bundle: RefinerBundle, path, meta: dict) -> Path:
    return save_checkpoint(path, {k: m.state_dict() for k, m in bundle.modules().items()}, meta)


def load_refiner(path, cfg: RunConfig) -> RefinerBundle:
    state, _ = load_checkpoint(path)
    bundle = build_refiner(cfg)
    for name, module in bundle.modules().items():
        module.load_state_dict(state[name])
    return bundle.eval()


def refine_pseudo_labels(bundle: RefinerBundle, masks: np.ndarray, cfg: RunConfig,
                         threshold: float | None = None,
                         batch_size: int = 8) -> np.ndarray:
    """Refine an (N, H, W) stack of noisy binary masks through G_AB and C_B.

    Inputs must already be at the refiner working resolution; the
    refined stack has the same shape and is binary.
    """
    if masks.ndim != 3:
        raise ShapeError(f"expected (N, H, W) mask stack, got ndim={masks.ndim}")
    n, h, w = masks.shape
    res = cfg.refiner.resolution
    if (h, w) != (res, res):
        raise ShapeError(f"masks are {h}x{w} but the refiner works at {res}x{res}")
    if threshold is None:
        threshold = cfg.loss.threshold
    empty = int((masks.reshape(n, -1).max(axis=1) == 0).sum())
    if empty:
        log.warning("refining %d all-background mask(s)", empty)
    bundle.eval()
    out = np.zeros((n, res, res), dtype=np.uint8)
    with torch.no_grad():
        for start in range(0, n, batch_size):
            chunk = _to_tensor(masks[start:start + batch_size].astype(np.float32))
            probs = torch.sigmoid(bundle.c_b(bundle.g_ab(chunk)))
            out[start:start + chunk.shape[0]] = (probs[:, 0].numpy() > threshold).astype(np.uint8)
    return out


def refine_masks(bundle: RefinerBundle, masks: np.ndarray, cfg: RunConfig,
                 batch_size: int = 8) -> np.ndarray:
    """Refine masks of any resolution, resampling to and from the refiner's.

    Nearest-neighbor in both directions so masks stay binary.
    """
    if masks.ndim != 3:
        raise ShapeError(f"expected (N, H, W) mask stack, got ndim={masks.ndim}")
    n, h, w = masks.shape
    res = cfg.refiner.resolution
    work = _resize_nearest(masks.astype(np.float32), res)
    out = refine_pseudo_labels(bundle, work, cfg, batch_size=batch_size)
    if (res, res) != (h, w):
        ri = np.minimum((np.arange(h) * (res / h)).astype(np.int64), res - 1)
        ci = np.minimum((np.arange(w) * (res / w)).astype(np.int64), res - 1)
        out = out[:, ri][:, :, ci]
    return out
