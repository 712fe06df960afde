"""Frozen networks consumed by the losses: a two-level feature extractor for
the perceptual term and a 12-class parsing network for the BCE term.

Both are plain convolution stacks described by a layer plan, so pretrained
weights (e.g. the first two VGG-19 blocks) can be converted into the
container format and loaded.  Tests use seeded random weights.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .container import read_container, write_container
from .dataio import NUM_CLASSES
from .errors import BadShape, CorruptFile

FORMAT_VERSION = 1
EXTRACTOR_TAPS = ("pool1", "pool2")
ACTIVATIONS = {"relu": F.relu, "softplus": F.softplus}


class FrozenConvNet(nn.Module):
    """Sequential 3x3 convs (ReLU or softplus between) and 2x2 max-pools.

    ``kind="extractor"`` returns the outputs at the pool layers named in
    ``EXTRACTOR_TAPS``; ``kind="parser"`` returns sigmoid probabilities of
    the last conv.
    """

    def __init__(self, plan, kind, input_channels=1, input_mean=None, input_std=None,
                 activation="relu"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise BadShape(f"unknown activation {activation!r}")
        self.plan = [dict(layer) for layer in plan]
        self.kind = kind
        self.activation = activation
        self.input_channels = input_channels
        mean = input_mean if input_mean is not None else [0.0] * input_channels
        std = input_std if input_std is not None else [1.0] * input_channels
        self.register_buffer("input_mean", torch.tensor(mean, dtype=torch.float32).view(1, -1, 1, 1))
        self.register_buffer("input_std", torch.tensor(std, dtype=torch.float32).view(1, -1, 1, 1))
        self.convs = nn.ModuleDict()
        for layer in self.plan:
            if layer["type"] == "conv":
                k = layer.get("kernel", 3)
                self.convs[layer["name"]] = nn.Conv2d(layer["in"], layer["out"], k, padding=k // 2)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        # parameters never change; keep eval semantics regardless
        return super().train(False)

    def _prepare(self, sketch):
        x = sketch
        if x.dim() == 3:
            x = x[None]
        if x.shape[1] != 1:
            x = x.mean(dim=1, keepdim=True)
        x = (x + 1.0) / 2.0
        if self.input_channels != 1:
            x = x.expand(-1, self.input_channels, -1, -1)
        return (x - self.input_mean.to(x.dtype)) / self.input_std.to(x.dtype)

    def forward(self, sketch):
        x = self._prepare(sketch)
        taps = []
        conv_names = [l["name"] for l in self.plan if l["type"] == "conv"]
        for layer in self.plan:
            if layer["type"] == "conv":
                x = self.convs[layer["name"]](x)
                if self.kind == "extractor" or layer["name"] != conv_names[-1]:
                    x = ACTIVATIONS[self.activation](x)
            else:
                x = F.max_pool2d(x, 2)
                if layer["name"] in EXTRACTOR_TAPS:
                    taps.append(x)
        if self.kind == "extractor":
            return taps
        return torch.sigmoid(x)

    def state_blocks(self):
        blocks = {}
        for name, conv in self.convs.items():
            blocks[f"{name}.weight"] = conv.weight.detach().cpu().numpy()
            blocks[f"{name}.bias"] = conv.bias.detach().cpu().numpy()
        return blocks

    def meta(self):
        return {
            "format_version": FORMAT_VERSION, "kind": self.kind, "layers": self.plan,
            "input_channels": self.input_channels,
            "input_mean": self.input_mean.flatten().tolist(),
            "input_std": self.input_std.flatten().tolist(),
            "activation": self.activation,
        }

    def save(self, path):
        write_container(path, self.meta(), self.state_blocks())


def validate_plan(plan, kind, input_channels):
    """Check channel chaining and the interface contract of a layer plan."""
    ch = input_channels
    pools = []
    convs = []
    for layer in plan:
        if layer["type"] == "conv":
            if layer["in"] != ch:
                raise BadShape(f"layer {layer['name']}: expects {layer['in']} channels, gets {ch}")
            ch = layer["out"]
            convs.append(layer["name"])
        elif layer["type"] == "pool":
            pools.append(layer["name"])
        else:
            raise BadShape(f"unknown layer type {layer['type']!r}")
    if kind == "extractor":
        missing = [t for t in EXTRACTOR_TAPS if t not in pools]
        if missing:
            raise BadShape(f"feature extractor lacks tap layers {missing}")
    elif kind == "parser":
        if pools:
            raise BadShape("parsing network must keep full resolution (no pools)")
        if ch != NUM_CLASSES:
            raise BadShape(f"parsing network must end with {NUM_CLASSES} channels, ends with {ch}")
    else:
        raise BadShape(f"unknown network kind {kind!r}")
    if not convs:
        raise BadShape("plan has no convolutions")


def load_frozen(path, kind):
    meta, blocks = read_container(path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise CorruptFile(f"{path}: unsupported format version {meta.get('format_version')}")
    if meta.get("kind") != kind:
        raise BadShape(f"{path}: holds a {meta.get('kind')!r} network, wanted {kind!r}")
    plan = meta["layers"]
    validate_plan(plan, kind, meta["input_channels"])
    net = FrozenConvNet(plan, kind, meta["input_channels"], meta.get("input_mean"), meta.get("input_std"),
                        meta.get("activation", "relu"))
    expected = {}
    for layer in plan:
        if layer["type"] == "conv":
            k = layer.get("kernel", 3)
            expected[f"{layer['name']}.weight"] = (layer["out"], layer["in"], k, k)
            expected[f"{layer['name']}.bias"] = (layer["out"],)
    if set(blocks) != set(expected):
        raise BadShape(f"{path}: blocks {sorted(blocks)} do not match plan {sorted(expected)}")
    with torch.no_grad():
        for name, shape in expected.items():
            arr = blocks[name]
            if tuple(arr.shape) != shape:
                raise BadShape(f"{path}: block {name} has shape {arr.shape}, expected {shape}")
            conv_name, attr = name.rsplit(".", 1)
            getattr(net.convs[conv_name], attr).copy_(torch.from_numpy(np.asarray(arr, dtype=np.float32)))
    return net


def _random_init(net, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in net.convs.values():
            fan_in = conv.weight[0].numel()
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
            conv.bias.copy_(torch.randn(conv.bias.shape, generator=g) * 0.01)
    return net


def stub_extractor(seed=0, widths=(8, 16), activation="relu"):
    """VGG-shaped two-block extractor with seeded random weights.

    ``activation="softplus"`` gives a smooth variant for finite-difference
    checks, which are unreliable across ReLU kinks.
    """
    w1, w2 = widths
    plan = [
        {"type": "conv", "name": "conv1_1", "in": 3, "out": w1},
        {"type": "conv", "name": "conv1_2", "in": w1, "out": w1},
        {"type": "pool", "name": "pool1"},
        {"type": "conv", "name": "conv2_1", "in": w1, "out": w2},
        {"type": "conv", "name": "conv2_2", "in": w2, "out": w2},
        {"type": "pool", "name": "pool2"},
    ]
    net = FrozenConvNet(plan, "extractor", input_channels=3,
                        input_mean=[0.485, 0.456, 0.406], input_std=[0.229, 0.224, 0.225],
                        activation=activation)
    return _random_init(net, seed)


def stub_parser(seed=1, width=16, activation="relu"):
    """Small full-resolution conv net emitting 12 sigmoid channels."""
    plan = [
        {"type": "conv", "name": "conv1", "in": 1, "out": width},
        {"type": "conv", "name": "conv2", "in": width, "out": width},
        {"type": "conv", "name": "conv3", "in": width, "out": NUM_CLASSES},
    ]
    return _random_init(FrozenConvNet(plan, "parser", input_channels=1, activation=activation), seed)
