"""Encoder-decoder generator with layout-driven statistics injection."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import BACKGROUND, NUM_CLASSES, downsample_layout
from .errors import BadShape, ShapeMismatch

NORM_EPS = 1e-5


@dataclass
class GeneratorConfig:
    widths: tuple[int, ...] = (64, 128, 256, 512, 512, 512, 512)
    use_saliency: bool = True
    use_layout: bool = True
    si_hidden: int = 128
    leaky_slope: float = 0.2
    skip_connections: bool = False
    num_classes: int = NUM_CLASSES

    @property
    def in_channels(self):
        return 4 if self.use_saliency else 3

    @property
    def n_stages(self):
        return len(self.widths)

    @property
    def image_size(self):
        # every stage halves the grid; the bottleneck is 2x2
        return 2 ** (self.n_stages + 1)

    @property
    def decoder_widths(self):
        return tuple(reversed(self.widths))


def instance_standardize(x, eps=NORM_EPS):
    """Per-sample, per-channel standardization over the spatial dims."""
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def batch_standardize(x, eps=NORM_EPS):
    """Per-channel standardization over batch and spatial dims."""
    mean = x.mean(dim=(0, 2, 3), keepdim=True)
    var = x.var(dim=(0, 2, 3), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def si_modulate(normalized, gamma, beta):
    if gamma.shape[-2:] != normalized.shape[-2:] or beta.shape[-2:] != normalized.shape[-2:]:
        raise ShapeMismatch(
            f"modulation {tuple(gamma.shape[-2:])} vs features {tuple(normalized.shape[-2:])}")
    return normalized * gamma + beta


def _init_conv(conv, std=0.02, bias=0.0):
    nn.init.normal_(conv.weight, 0.0, std)
    if conv.bias is not None:
        nn.init.constant_(conv.bias, bias)


class SIModule(nn.Module):
    """Parameter-free normalization followed by a per-pixel affine map whose
    scale and shift are convolved from the semantic layout."""

    def __init__(self, channels, num_classes=NUM_CLASSES, hidden=128):
        super().__init__()
        self.shared = nn.Conv2d(num_classes, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)
        _init_conv(self.shared)
        # start close to the identity modulation
        _init_conv(self.gamma, std=0.002, bias=1.0)
        _init_conv(self.beta, std=0.002, bias=0.0)

    def modulation(self, layout):
        actv = F.relu(self.shared(layout))
        return self.gamma(actv), self.beta(actv)

    def forward(self, x, layout):
        if layout.shape[-2:] != x.shape[-2:]:
            raise ShapeMismatch(
                f"layout {tuple(layout.shape[-2:])} vs features {tuple(x.shape[-2:])}")
        gamma, beta = self.modulation(layout.to(x.dtype))
        return si_modulate(instance_standardize(x), gamma, beta)


class SIResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, num_classes=NUM_CLASSES, hidden=128):
        super().__init__()
        self.si0 = SIModule(in_ch, num_classes, hidden)
        self.conv0 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.si1 = SIModule(out_ch, num_classes, hidden)
        self.conv1 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        _init_conv(self.conv0)
        _init_conv(self.conv1)
        if in_ch != out_ch:
            self.si_skip = SIModule(in_ch, num_classes, hidden)
            self.conv_skip = nn.Conv2d(in_ch, out_ch, 1, bias=False)
            _init_conv(self.conv_skip)
        else:
            self.si_skip = self.conv_skip = None

    def forward(self, x, layout):
        h = self.conv0(F.relu(self.si0(x, layout)))
        h = self.conv1(F.relu(self.si1(h, layout)))
        skip = x if self.conv_skip is None else self.conv_skip(self.si_skip(x, layout))
        return h + skip


class Encoder(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        stages = []
        in_ch = config.in_channels
        n = config.n_stages
        for i, width in enumerate(config.widths):
            layers = [nn.Conv2d(in_ch, width, 4, stride=2, padding=1)]
            # pix2pix-style: no norm on the first and innermost stages
            if 0 < i < n - 1:
                layers.append(nn.InstanceNorm2d(width))
            layers.append(nn.LeakyReLU(config.leaky_slope))
            stages.append(nn.Sequential(*layers))
            _init_conv(layers[0])
            in_ch = width
        self.stages = nn.ModuleList(stages)

    def forward(self, x, return_all=False):
        size = self.config.image_size
        if x.dim() != 4 or x.shape[1] != self.config.in_channels or x.shape[-2:] != (size, size):
            raise BadShape(
                f"encoder expects (N, {self.config.in_channels}, {size}, {size}), "
                f"got {tuple(x.shape)}")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats if return_all else x


class Generator(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or GeneratorConfig()
        self.encoder = Encoder(config)
        dec = config.decoder_widths
        blocks = []
        for i in range(config.n_stages):
            in_ch = dec[i]
            if config.skip_connections and i > 0:
                in_ch += dec[i]
            out_ch = dec[i + 1] if i + 1 < len(dec) else dec[-1]
            blocks.append(SIResBlock(in_ch, out_ch, config.num_classes, config.si_hidden))
        self.blocks = nn.ModuleList(blocks)
        self.to_sketch = nn.Conv2d(dec[-1], 1, 3, padding=1)
        _init_conv(self.to_sketch)

    def encode(self, photo, saliency=None, return_all=False):
        x = photo
        if self.config.use_saliency:
            if saliency is None:
                raise ShapeMismatch("saliency map required when use_saliency is set")
            if saliency.shape[-2:] != photo.shape[-2:]:
                raise ShapeMismatch("photo and saliency sizes differ")
            x = torch.cat([photo, saliency.to(photo.dtype)], dim=1)
        return self.encoder(x, return_all=return_all)

    def forward(self, photo, saliency, layout):
        if layout.shape[-2:] != photo.shape[-2:]:
            raise ShapeMismatch(
                f"layout {tuple(layout.shape[-2:])} vs photo {tuple(photo.shape[-2:])}")
        layout = layout.to(photo.dtype)
        if not self.config.use_layout:
            layout = torch.zeros_like(layout)
            layout[:, BACKGROUND] = 1
        feats = self.encode(photo, saliency, return_all=True)
        x = feats[-1]
        for i, block in enumerate(self.blocks):
            if self.config.skip_connections and i > 0:
                x = torch.cat([x, feats[-1 - i]], dim=1)
            x = block(x, downsample_layout(layout, x.shape[-2:]))
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(x, self.config.leaky_slope)
        return torch.tanh(self.to_sketch(x))


def generate(generator, photo, saliency, layout):
    """Run the generator on unbatched numpy/tensor grids; returns (1, H, W)."""
    dtype = next(generator.parameters()).dtype
    photo, saliency, layout = (torch.as_tensor(g)[None].to(dtype) for g in (photo, saliency, layout))
    with torch.no_grad():
        return generator(photo, saliency, layout)[0]
