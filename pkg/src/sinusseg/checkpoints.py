"""Checkpoint files with JSON sidecars.

Weights go through ``torch.save`` as plain state dicts; everything a
human or a resume step needs to interpret them (epoch, seed, config
digest, architecture parameters) lives in a readable ``.json`` sidecar
next to the ``.pt`` file.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

FORMAT_VERSION = 1


def sidecar_path(ckpt_path) -> Path:
    return Path(ckpt_path).with_suffix(".json")


def save_checkpoint(path, state_dicts: dict, meta: dict) -> Path:
    """Write model weights plus a JSON sidecar describing them.

    state_dicts maps a role name (e.g. "model", "g_ab") to a module
    state dict. meta must be JSON-serializable.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {name: {k: v.cpu() for k, v in sd.items()} for name, sd in state_dicts.items()}
    torch.save(payload, path)
    side = dict(meta)
    side["format_version"] = FORMAT_VERSION
    side["roles"] = sorted(payload)
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Return (state_dicts, meta). Meta is {} if the sidecar is missing."""
    path = Path(path)
    state = torch.load(path, map_location="cpu", weights_only=True)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        with open(side, encoding="utf-8") as fh:
            meta = json.load(fh)
    return state, meta
