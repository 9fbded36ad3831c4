"""Synthetic phantom images for desk-scale runs.

Each phantom is a grayscale image holding two dark quasi-elliptical
cavities over a noisy background with low-frequency sinusoidal bands
standing in for overlapping anatomy. The paired mask marks the two
cavities, which by construction never touch, so every mask has exactly
two 8-connected components and a foreground fraction inside [0.02, 0.20].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError
from .masks import save_image, save_mask
from .splits import SampleRecord, SplitManifest

# geometry in units of the image side; ellipse extents stay clear of the midline
_CENTER_X = ((0.26, 0.30), (0.70, 0.74))
_CENTER_Y = (0.40, 0.48)
_SEMI_AXIS_A = (0.10, 0.15)
_SEMI_AXIS_B = (0.12, 0.17)
_MAX_TILT_DEG = 25.0


def _ellipse_mask(size, cx, cy, a, b, theta):
    yy, xx = np.mgrid[0:size, 0:size]
    x = (xx + 0.5) - cx
    y = (yy + 0.5) - cy
    u = x * np.cos(theta) + y * np.sin(theta)
    v = -x * np.sin(theta) + y * np.cos(theta)
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0


def _render_sample(size: int, rng: np.random.Generator):
    mask = np.zeros((size, size), dtype=bool)
    for (x_lo, x_hi) in _CENTER_X:
        cx = rng.uniform(x_lo, x_hi) * size
        cy = rng.uniform(*_CENTER_Y) * size
        a = rng.uniform(*_SEMI_AXIS_A) * size
        b = rng.uniform(*_SEMI_AXIS_B) * size
        theta = np.deg2rad(rng.uniform(-_MAX_TILT_DEG, _MAX_TILT_DEG))
        mask |= _ellipse_mask(size, cx, cy, a, b, theta)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    image = 0.55 + 0.20 * (yy / size)

    for _ in range(3):
        amp = rng.uniform(0.04, 0.09)
        freq = rng.uniform(1.5, 4.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angle = rng.uniform(0.0, np.pi)
        coord = xx * np.cos(angle) + yy * np.sin(angle)
        image += amp * np.sin(2.0 * np.pi * freq * coord / size + phase)

    cavity = gaussian_filter(mask.astype(np.float64), sigma=1.5)
    image *= 1.0 - 0.45 * cavity
    image += rng.normal(0.0, 0.02, size=image.shape)
    return np.clip(image, 0.0, 1.0), mask.astype(np.uint8)


def generate_phantom_dataset(n: int, size: int, seed: int, out_dir) -> SplitManifest:
    """Write n phantom image/mask pairs and return a manifest of the records.

    Deterministic per seed: repeated calls produce byte-identical files.
    All records come back labeled in the train split; re-partition them
    with build_split_manifest.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if size < 64:
        raise ConfigError(f"size must be >= 64, got {size}")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        image, mask = _render_sample(size, rng)
        image_id = f"phantom_{i:04d}"
        image_path = out_dir / "images" / f"{image_id}.png"
        mask_path = out_dir / "masks" / f"{image_id}.png"
        save_image(image, image_path)
        save_mask(mask, mask_path)
        records.append(SampleRecord(image_id=image_id, image_path=image_path,
                                    mask_path=mask_path, labeled=True, split="train"))
    return SplitManifest(records=records, seed=seed)
