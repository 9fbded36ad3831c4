"""Binary mask and grayscale image I/O.

Masks live in memory as 2D uint8 arrays of {0, 1} and on disk as 8-bit
single-channel PNG with values {0, 255}. Any nonzero pixel counts as
foreground on load, so load(save(m)) == m.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import FormatError


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map into a {0,1} uint8 mask."""
    return (np.asarray(probs) > threshold).astype(np.uint8)


def _open_single_channel(path) -> Image.Image:
    img = Image.open(path)
    if img.mode != "L":
        raise FormatError(
            f"{path}: expected 8-bit single-channel PNG (mode 'L'), got mode '{img.mode}'"
        )
    return img


def load_mask(path) -> np.ndarray:
    """Load a mask PNG; any nonzero pixel becomes foreground."""
    img = _open_single_channel(path)
    return (np.asarray(img) > 0).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a {0,1} mask as an 8-bit PNG with values {0,255}."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise FormatError(f"mask must be 2D, got shape {mask.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(((mask > 0) * 255).astype(np.uint8), mode="L").save(path)


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale image as float32 in [0, 1]."""
    img = _open_single_channel(path)
    return np.asarray(img, dtype=np.float32) / 255.0


def save_image(image: np.ndarray, path) -> None:
    """Write a float image in [0, 1] as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)
