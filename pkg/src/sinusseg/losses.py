"""Training objectives: supervised, distillation, unsupervised and GAN terms.

Every function is a pure map from tensors to a finite scalar tensor and
is safe for |logit| <= 100 (BCE and KL are computed through softplus /
log-sigmoid, never through raw log of a probability). Inputs may be
(H, W) single maps or (B, ...) batches; losses are averaged per pixel and
then over the batch so hyperparameter defaults stay resolution-independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError

log = logging.getLogger(__name__)


@dataclass
class LossParams:
    """All scalar hyperparameters of the objective, with library defaults."""

    alpha: float = 0.5
    beta: float = 1e-6
    lambda_cycle: float = 10.0
    temperature: float = 2.0
    tau: float | None = None  # None resolves to image_diagonal / 20 at use
    threshold: float = 0.5
    dice_eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.lambda_cycle < 0:
            raise ValueError(f"lambda_cycle must be >= 0, got {self.lambda_cycle}")
        if self.temperature <= 1.0:
            raise ValueError(f"temperature must be > 1, got {self.temperature}")
        if self.tau is not None and self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        if self.dice_eps <= 0:
            raise ValueError(f"dice_eps must be > 0, got {self.dice_eps}")

    def resolved_tau(self, image_diagonal: float) -> float:
        return self.tau if self.tau is not None else image_diagonal / 20.0


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def _as_batch(x: torch.Tensor) -> torch.Tensor:
    """Flatten to (B, pixels); a 2D map counts as a batch of one."""
    if x.dim() < 2:
        raise ShapeError(f"expected at least 2D input, got shape {tuple(x.shape)}")
    if x.dim() == 2:
        return x.reshape(1, -1)
    return x.reshape(x.shape[0], -1)


def bce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel binary cross entropy in the numerically stable form."""
    _check_same_shape(logits, target, "bce_loss")
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def dice_loss(probs: torch.Tensor, gt: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Soft Dice loss with squared-sum denominator, averaged over the batch."""
    _check_same_shape(probs, gt, "dice_loss")
    p = _as_batch(probs)
    y = _as_batch(gt).to(probs.dtype)
    num = 2.0 * (p * y).sum(dim=1) + eps
    den = (p * p).sum(dim=1) + (y * y).sum(dim=1) + eps
    return (1.0 - num / den).mean()


def supervised_loss(student_logits: torch.Tensor, gt: torch.Tensor,
                    eps: float = 1e-6) -> torch.Tensor:
    """Dice loss on sigmoid probabilities plus BCE on the raw logits."""
    return dice_loss(torch.sigmoid(student_logits), gt, eps=eps) + bce_loss(student_logits, gt)


def soften(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Per-pixel (background, foreground) probabilities of the tempered
    two-class softmax over the logit vector (0, z)."""
    if temperature <= 1.0:
        raise ValueError(f"temperature must be > 1, got {temperature}")
    fg = torch.sigmoid(logits / temperature)
    return torch.stack([1.0 - fg, fg], dim=-1)


def _pixel_kl(teacher_logits: torch.Tensor, student_logits: torch.Tensor,
              temperature: float) -> torch.Tensor:
    """Per-pixel KL(q_t || q_s) of the tempered two-class distributions."""
    a = teacher_logits / temperature
    b = student_logits / temperature
    # KL = sigma(-a) (softplus(b) - softplus(a)) + sigma(a) (softplus(-b) - softplus(-a))
    return (torch.sigmoid(-a) * (F.softplus(b) - F.softplus(a))
            + torch.sigmoid(a) * (F.softplus(-b) - F.softplus(-a)))


def kd_weights(hd95_values, tau: float) -> np.ndarray:
    """Per-sample distillation weights from boundary discrepancies.

    w_i = exp(-d_i / tau) normalized by the batch maximum, computed in the
    shift-invariant form exp(-(d_i - min_j d_j) / tau); the best sample
    always gets weight 1.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    d = np.asarray(list(hd95_values), dtype=np.float64)
    if d.size == 0:
        raise ValueError("hd95_values must be nonempty")
    return np.exp(-(d - d.min()) / tau)


def weighted_kd_loss(teacher_logits: torch.Tensor, student_logits: torch.Tensor,
                     weights, temperature: float) -> torch.Tensor:
    """(T^2 / B) * sum_i w_i * KL_i, with per-sample KL averaged over pixels."""
    _check_same_shape(teacher_logits, student_logits, "weighted_kd_loss")
    kl = _pixel_kl(teacher_logits, student_logits, temperature)
    per_sample = _as_batch(kl).mean(dim=1)
    w = torch.as_tensor(np.asarray(weights, dtype=np.float64),
                        dtype=per_sample.dtype, device=per_sample.device)
    if w.shape != per_sample.shape:
        raise ShapeError(f"weights {tuple(w.shape)} vs batch {tuple(per_sample.shape)}")
    batch = per_sample.shape[0]
    return (temperature ** 2 / batch) * (w * per_sample).sum()


def unsup_loss(student_logits: torch.Tensor, pseudo: torch.Tensor) -> torch.Tensor:
    """Per-pixel BCE averaged over pseudo-foreground pixels only.

    An all-background pseudo label contributes nothing (returns 0 with a
    logged warning) instead of dividing by zero.
    """
    _check_same_shape(student_logits, pseudo, "unsup_loss")
    y = pseudo.to(student_logits.dtype)
    fg = y.sum()
    if fg.item() == 0:
        log.warning("unsup_loss: pseudo label has no foreground pixels, returning 0")
        return torch.zeros((), dtype=student_logits.dtype, device=student_logits.device)
    per_pixel = F.binary_cross_entropy_with_logits(student_logits, y, reduction="none")
    return (y * per_pixel).sum() / fg


def total_loss(sup: torch.Tensor, wkd: torch.Tensor, unsup: torch.Tensor,
               p: LossParams) -> torch.Tensor:
    """alpha * supervised + beta * distillation + (1 - alpha) * unsupervised."""
    return p.alpha * sup + p.beta * wkd + (1.0 - p.alpha) * unsup


def lsgan_discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator objective E[(D(real)-1)^2] + E[D(fake)^2]."""
    return ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()


def lsgan_generator_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Least-squares generator objective E[(D(fake)-1)^2]."""
    return ((d_fake - 1.0) ** 2).mean()


def cycle_loss(recon_a: torch.Tensor, orig_a: torch.Tensor,
               recon_b: torch.Tensor, orig_b: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel L1 reconstruction error, summed over both directions."""
    _check_same_shape(recon_a, orig_a, "cycle_loss A")
    _check_same_shape(recon_b, orig_b, "cycle_loss B")
    return ((recon_a - orig_a.to(recon_a.dtype)).abs().mean()
            + (recon_b - orig_b.to(recon_b.dtype)).abs().mean())


def correction_loss(corrected_ab: torch.Tensor, target_b: torch.Tensor,
                    corrected_ba: torch.Tensor, target_a: torch.Tensor) -> torch.Tensor:
    """BCE of both correction outputs against their opposite-domain targets."""
    return bce_loss(corrected_ab, target_b) + bce_loss(corrected_ba, target_a)


def refiner_total_loss(adv_ab, adv_ba, cyc, corr, lambda_cycle: float):
    """Combined refiner objective: both adversarial terms + lambda * cycle + correction."""
    return adv_ab + adv_ba + lambda_cycle * cyc + corr
