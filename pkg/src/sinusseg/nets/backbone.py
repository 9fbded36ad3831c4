"""Segmentation backbones behind a single forward contract.

A backbone maps a (B, 1, H, W) grayscale batch to a (B, 1, H, W) logit
map. Builders are looked up by name in a registry so externally provided
models (e.g. adapters around pretrained foundation weights) can be
plugged in behind the same contract without touching the training code.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ConfigError

_REGISTRY: dict = {}


@dataclass
class BackboneSpec:
    name: str = "compact_unet"
    input_size: int = 128
    base_channels: int = 16
    depth: int = 4

    def to_json(self) -> dict:
        return {"name": self.name, "input_size": self.input_size,
                "base_channels": self.base_channels, "depth": self.depth}

    @classmethod
    def from_json(cls, obj: dict) -> "BackboneSpec":
        return cls(**obj)


def register_backbone(name):
    """Decorator registering a builder(spec) -> nn.Module under a name."""
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def build_backbone(spec: BackboneSpec, seed: int = 0) -> nn.Module:
    """Construct a backbone with deterministic initial parameters."""
    if spec.name not in _REGISTRY:
        raise ConfigError(f"unknown backbone {spec.name!r}; known: {sorted(_REGISTRY)}")
    if spec.input_size % (2 ** spec.depth) != 0:
        raise ConfigError(
            f"input_size {spec.input_size} not divisible by 2^depth = {2 ** spec.depth}"
        )
    torch.manual_seed(seed)
    return _REGISTRY[spec.name](spec)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def _norm(channels):
    return nn.GroupNorm(min(8, channels), channels)


class _DoubleConv(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            _norm(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class CompactUNet(nn.Module):
    """Encoder-decoder with skip connections; desk-scale default backbone."""

    def __init__(self, base_channels=16, depth=4, in_channels=1):
        super().__init__()
        self.depth = depth
        chans = [base_channels * (2 ** i) for i in range(depth + 1)]
        self.stem = _DoubleConv(in_channels, chans[0])
        self.pool = nn.MaxPool2d(2)
        self.encoders = nn.ModuleList(
            _DoubleConv(chans[i], chans[i + 1]) for i in range(depth)
        )
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2)
            for i in reversed(range(depth))
        )
        self.decoders = nn.ModuleList(
            _DoubleConv(chans[i] * 2, chans[i]) for i in reversed(range(depth))
        )
        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        skips = [self.stem(x)]
        for enc in self.encoders:
            skips.append(enc(self.pool(skips[-1])))
        h = skips.pop()
        for up, dec in zip(self.ups, self.decoders):
            h = dec(torch.cat([up(h), skips.pop()], dim=1))
        return self.head(h)


@register_backbone("compact_unet")
def _build_compact_unet(spec: BackboneSpec) -> nn.Module:
    return CompactUNet(base_channels=spec.base_channels, depth=spec.depth)
