"""Conditional patch discriminator over (photo, saliency, sketch) stacks."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import BadShape, ShapeMismatch
from .generator import _init_conv


@dataclass
class DiscriminatorConfig:
    widths: tuple[int, ...] = (64, 128, 256, 512)
    use_saliency: bool = True
    leaky_slope: float = 0.2

    @property
    def in_channels(self):
        return 5 if self.use_saliency else 4


class Discriminator(nn.Module):
    """PatchGAN: stride-2 stages for all but the last width, then two
    stride-1 4x4 convolutions; a 256x256 input gives 30x30 raw logits."""

    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or DiscriminatorConfig()
        layers = []
        in_ch = config.in_channels
        last = len(config.widths) - 1
        for i, width in enumerate(config.widths):
            stride = 1 if i == last else 2
            conv = nn.Conv2d(in_ch, width, 4, stride=stride, padding=1)
            _init_conv(conv)
            layers.append(conv)
            if i > 0:
                layers.append(nn.InstanceNorm2d(width))
            layers.append(nn.LeakyReLU(config.leaky_slope))
            in_ch = width
        head = nn.Conv2d(in_ch, 1, 4, stride=1, padding=1)
        _init_conv(head)
        layers.append(head)
        self.net = nn.Sequential(*layers)

    def output_size(self, size):
        n_down = len(self.config.widths) - 1
        for _ in range(n_down):
            size = size // 2
        return size - 2

    def forward(self, photo, saliency, sketch):
        if photo.shape[-2:] != sketch.shape[-2:]:
            raise ShapeMismatch("photo and sketch sizes differ")
        parts = [photo]
        if self.config.use_saliency:
            if saliency is None or saliency.shape[-2:] != photo.shape[-2:]:
                raise ShapeMismatch("saliency missing or sized differently")
            parts.append(saliency.to(photo.dtype))
        parts.append(sketch.to(photo.dtype))
        x = torch.cat(parts, dim=1)
        if x.shape[1] != self.config.in_channels:
            raise BadShape(f"expected {self.config.in_channels} stacked channels, got {x.shape[1]}")
        if self.output_size(x.shape[-1]) < 1 or self.output_size(x.shape[-2]) < 1:
            raise BadShape(f"input {tuple(x.shape[-2:])} too small for the patch plan")
        return self.net(x)
