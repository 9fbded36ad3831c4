"""Convolutional block attention: channel gating followed by spatial gating.

Both gates are sigmoid outputs, so attention weights lie strictly in
(0, 1) and the block is purely multiplicative: replacing every weight
with 1 recovers the input exactly.
"""

import torch
import torch.nn as nn


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction=16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.avg_pool = nn.AdaptiveAvgPool2d(1)
        self.max_pool = nn.AdaptiveMaxPool2d(1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        return torch.sigmoid(self.mlp(self.avg_pool(x)) + self.mlp(self.max_pool(x)))


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=False)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class CBAM(nn.Module):
    """Sequential channel-then-spatial multiplicative gating."""

    def __init__(self, channels, reduction=16, kernel_size=7):
        super().__init__()
        if channels < 2:
            raise ValueError(f"CBAM needs >= 2 channels, got {channels}")
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x, return_weights=False):
        cw = self.channel(x)
        x = x * cw
        sw = self.spatial(x)
        out = x * sw
        if return_weights:
            return out, cw, sw
        return out
