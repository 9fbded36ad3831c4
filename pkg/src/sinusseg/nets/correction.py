"""Correction network: residual encoder-decoder with selective attention.

Four downsampling and four upsampling stages around a bottleneck, with
encoder-to-decoder skip connections. Attention blocks sit only after
intermediate stages: down stages 2-4 (counted after the stem) and their
mirrored up stages; never at the stem, the bottleneck, or the final up
stage. Channel widths double per stage from a configurable base.
Input is a 1-channel mask or probability map, output a 1-channel logit map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from ..errors import ConfigError
from .cbam import CBAM

N_STAGES = 4


@dataclass
class CorrectionNetSpec:
    base_channels: int = 32
    cbam_stages: frozenset = field(default_factory=lambda: frozenset({2, 3, 4}))
    residual: bool = True
    skip_connections: bool = True

    def __post_init__(self):
        self.cbam_stages = frozenset(self.cbam_stages)
        bad = self.cbam_stages - {2, 3, 4}
        if bad:
            raise ConfigError(f"cbam_stages must be within {{2,3,4}}, got {sorted(bad)}")

    def to_json(self) -> dict:
        return {"base_channels": self.base_channels,
                "cbam_stages": sorted(self.cbam_stages),
                "residual": self.residual,
                "skip_connections": self.skip_connections}

    @classmethod
    def from_json(cls, obj: dict) -> "CorrectionNetSpec":
        return cls(base_channels=obj["base_channels"],
                   cbam_stages=frozenset(obj["cbam_stages"]),
                   residual=obj["residual"],
                   skip_connections=obj["skip_connections"])


def _norm(channels):
    return nn.GroupNorm(min(8, channels), channels)


class _ResBlock(nn.Module):
    def __init__(self, channels, residual=True):
        super().__init__()
        self.residual = residual
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels),
        )
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        h = self.body(x)
        return self.act(x + h) if self.residual else self.act(h)


class CorrectionNet(nn.Module):
    def __init__(self, spec: CorrectionNetSpec, in_channels=1):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        chans = [c * (2 ** i) for i in range(N_STAGES + 1)]

        self.stem = nn.Sequential(nn.Conv2d(in_channels, chans[0], 3, padding=1),
                                  _norm(chans[0]), nn.ReLU(inplace=True))
        self.down = nn.ModuleList()
        self.down_cbam = nn.ModuleList()
        for k in range(1, N_STAGES + 1):
            self.down.append(nn.Sequential(
                nn.Conv2d(chans[k - 1], chans[k], 3, stride=2, padding=1),
                _norm(chans[k]), nn.ReLU(inplace=True),
                _ResBlock(chans[k], residual=spec.residual),
            ))
            self.down_cbam.append(CBAM(chans[k]) if k in spec.cbam_stages else nn.Identity())

        self.bottleneck = _ResBlock(chans[N_STAGES], residual=spec.residual)

        self.up = nn.ModuleList()
        self.up_fuse = nn.ModuleList()
        self.up_cbam = nn.ModuleList()
        for k in range(1, N_STAGES + 1):  # up stage k mirrors down stage 5 - k
            cin, cout = chans[N_STAGES + 1 - k], chans[N_STAGES - k]
            self.up.append(nn.ConvTranspose2d(cin, cout, 2, stride=2))
            fuse_in = cout * 2 if spec.skip_connections else cout
            self.up_fuse.append(nn.Sequential(
                nn.Conv2d(fuse_in, cout, 3, padding=1),
                _norm(cout), nn.ReLU(inplace=True),
                _ResBlock(cout, residual=spec.residual),
            ))
            mirrored = N_STAGES + 1 - k
            self.up_cbam.append(CBAM(cout) if mirrored in spec.cbam_stages else nn.Identity())

        self.head = nn.Conv2d(chans[0], 1, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % (2 ** N_STAGES) or w % (2 ** N_STAGES):
            raise ConfigError(f"correction net input must be divisible by 16, got {h}x{w}")
        skips = [self.stem(x)]
        h = skips[0]
        for down, gate in zip(self.down, self.down_cbam):
            h = gate(down(h))
            skips.append(h)
        skips.pop()  # bottleneck-level features are not a skip source
        h = self.bottleneck(h)
        for up, fuse, gate in zip(self.up, self.up_fuse, self.up_cbam):
            h = up(h)
            if self.spec.skip_connections:
                h = torch.cat([h, skips.pop()], dim=1)
            else:
                skips.pop()
            h = gate(fuse(h))
        return self.head(h)


def build_correction_net(spec: CorrectionNetSpec, seed: int = 0) -> CorrectionNet:
    """Construct a correction network with deterministic initial parameters."""
    torch.manual_seed(seed)
    return CorrectionNet(spec)
