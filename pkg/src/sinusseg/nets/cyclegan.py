"""Mask-to-mask translation networks for pseudo-label refinement.

Generators follow the encoder / residual body / decoder layout of
unpaired translation models and emit probability maps in [0, 1];
discriminators are patch-level and emit a spatial score grid. Instance
normalization throughout for stability at small batch sizes.
"""

import torch
import torch.nn as nn


def _inorm(channels):
    return nn.InstanceNorm2d(channels)


class _GenResBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3),
            _inorm(channels), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3),
            _inorm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class ResnetGenerator(nn.Module):
    def __init__(self, base_channels=32, n_res_blocks=4, in_channels=1):
        super().__init__()
        c = base_channels
        layers = [
            nn.ReflectionPad2d(3), nn.Conv2d(in_channels, c, 7),
            _inorm(c), nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            _inorm(2 * c), nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1),
            _inorm(4 * c), nn.ReLU(inplace=True),
        ]
        layers += [_GenResBlock(4 * c) for _ in range(n_res_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            _inorm(2 * c), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            _inorm(c), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3), nn.Conv2d(c, 1, 7),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return torch.sigmoid(self.body(x))


class PatchDiscriminator(nn.Module):
    def __init__(self, base_channels=32, n_layers=3, in_channels=1):
        super().__init__()
        c = base_channels
        layers = [nn.Conv2d(in_channels, c, 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        for _ in range(n_layers - 1):
            layers += [nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
                       _inorm(2 * c), nn.LeakyReLU(0.2, inplace=True)]
            c *= 2
        layers.append(nn.Conv2d(c, 1, 4, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


def build_cyclegan_pair(base_channels=32, n_res_blocks=4, disc_channels=32, seed=0):
    """Two generators and two patch discriminators with seeded init."""
    torch.manual_seed(seed)
    g_ab = ResnetGenerator(base_channels, n_res_blocks)
    g_ba = ResnetGenerator(base_channels, n_res_blocks)
    d_a = PatchDiscriminator(disc_channels)
    d_b = PatchDiscriminator(disc_channels)
    return g_ab, g_ba, d_a, d_b
