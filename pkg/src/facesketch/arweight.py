"""Adaptive re-weighting: per-class sketch statistics and the affinity loss.

Every function accepts a sketch of shape ``(H, W)``, ``(C, H, W)`` or
``(N, C, H, W)`` and a one-hot layout of shape ``(12, H, W)`` or
``(N, 12, H, W)``.  Multi-channel sketches are averaged to one channel.
Unbatched inputs give unbatched outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeMismatch

EPS = 1e-8
VARIANCE_MODES = ("intra", "literal")


@dataclass
class ClassStats:
    mu: torch.Tensor  # (N, K)
    nu: torch.Tensor  # (N, K)
    counts: torch.Tensor  # (N, K)


@dataclass
class ARMapStack:
    mean_map: torch.Tensor  # (N, K, H, W), layout * mu
    var_map: torch.Tensor  # (N, K, H, W), layout * nu

    def stacked(self):
        """The 2K-channel form (means first, then variances)."""
        return torch.cat([self.mean_map, self.var_map], dim=-3)


def _as_batch(sketch, layout):
    sketch = torch.as_tensor(sketch)
    layout = torch.as_tensor(layout)
    batched = sketch.dim() == 4 or layout.dim() == 4
    if sketch.dim() == 2:
        sketch = sketch[None]
    if sketch.dim() == 3:
        sketch = sketch[None]
    if layout.dim() == 3:
        layout = layout[None]
    if sketch.dim() != 4 or layout.dim() != 4:
        raise ShapeMismatch(f"bad ranks: sketch {tuple(sketch.shape)}, layout {tuple(layout.shape)}")
    if sketch.shape[-2:] != layout.shape[-2:]:
        raise ShapeMismatch(
            f"sketch {tuple(sketch.shape[-2:])} and layout {tuple(layout.shape[-2:])} differ")
    if sketch.shape[1] != 1:
        sketch = sketch.mean(dim=1, keepdim=True)
    if not torch.is_floating_point(sketch):
        sketch = sketch.double()
    layout = layout.to(sketch.dtype)
    if layout.shape[0] != sketch.shape[0]:
        if layout.shape[0] == 1:
            layout = layout.expand(sketch.shape[0], -1, -1, -1)
        elif sketch.shape[0] == 1:
            sketch = sketch.expand(layout.shape[0], -1, -1, -1)
        else:
            raise ShapeMismatch("sketch and layout batch sizes differ")
    return sketch, layout, batched


def _unbatch(t, batched):
    return t if batched else t[0]


def _safe_div(num, den):
    ok = den > 0
    return torch.where(ok, num / torch.where(ok, den, torch.ones_like(den)), torch.zeros_like(num))


def _class_mean(f, s):
    counts = s.sum(dim=(2, 3))
    return _safe_div((s * f).sum(dim=(2, 3)), counts), counts


def _class_variance(f, s, mu, mode):
    counts = s.sum(dim=(2, 3))
    mu_b = mu[:, :, None, None]
    if mode == "intra":
        dev = s * (f - mu_b) ** 2
    elif mode == "literal":
        # (S*F - mu)^2 over the whole grid, as written
        dev = (s * f - mu_b) ** 2 * (counts[:, :, None, None] > 0)
    else:
        raise ValueError(f"variance mode must be one of {VARIANCE_MODES}")
    return _safe_div(dev.sum(dim=(2, 3)), counts)


def class_mean(sketch, layout):
    f, s, batched = _as_batch(sketch, layout)
    return _unbatch(_class_mean(f, s)[0], batched)


def class_variance(sketch, layout, mu=None, mode="intra"):
    f, s, batched = _as_batch(sketch, layout)
    if mu is None:
        mu = _class_mean(f, s)[0]
    else:
        mu = torch.as_tensor(mu, dtype=f.dtype)
        if mu.dim() == 1:
            mu = mu[None]
    return _unbatch(_class_variance(f, s, mu, mode), batched)


def class_stats(sketch, layout, mode="intra"):
    f, s, batched = _as_batch(sketch, layout)
    mu, counts = _class_mean(f, s)
    nu = _class_variance(f, s, mu, mode)
    return ClassStats(*(_unbatch(t, batched) for t in (mu, nu, counts)))


def build_ar_maps(stats, layout):
    s = torch.as_tensor(layout)
    batched = s.dim() == 4
    if not batched:
        s = s[None]
    mu, nu = stats.mu, stats.nu
    if mu.dim() == 1:
        mu, nu = mu[None], nu[None]
    if mu.shape[-1] != s.shape[1]:
        raise ShapeMismatch(f"{mu.shape[-1]} class stats for a {s.shape[1]}-class layout")
    s = s.to(mu.dtype)
    maps = ARMapStack(s * mu[:, :, None, None], s * nu[:, :, None, None])
    if not batched:
        maps = ARMapStack(maps.mean_map[0], maps.var_map[0])
    return maps


def _norm(x):
    sq = (x * x).sum(dim=(-2, -1))
    ok = sq > 0
    return torch.where(ok, torch.sqrt(torch.where(ok, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def _cosine(f, maps):
    # f: (N, 1, H, W); maps: (N, K, H, W) -> (N, K)
    dot = (f * maps).sum(dim=(-2, -1))
    nf, nm = _norm(f), _norm(maps)
    ok = (nf > 0) & (nm > 0)
    return torch.where(ok, dot / (nf * nm + EPS), torch.zeros_like(dot))


def affinity(sketch, maps):
    """Cosine affinity between the sketch and each broadcast map channel.

    Returns ``(N, 2, K)``: row 0 against the mean maps, row 1 against the
    variance maps.  Entries are 0 when either vector is all-zero.
    """
    mean_map, var_map = maps.mean_map, maps.var_map
    if mean_map.dim() == 3:
        mean_map, var_map = mean_map[None], var_map[None]
    f, _, batched = _as_batch(sketch, mean_map)
    batched = batched or maps.mean_map.dim() == 4
    c = torch.stack([_cosine(f, mean_map.to(f.dtype)), _cosine(f, var_map.to(f.dtype))], dim=1)
    return _unbatch(c, batched)


def affinity_vector(sketch, layout, mode="intra"):
    f, s, batched = _as_batch(sketch, layout)
    maps = build_ar_maps(class_stats(f, s, mode), s)
    return _unbatch(affinity(f, maps), batched)


def ar_loss(target, fake, layout, mode="intra", reduction="mean"):
    """Sum over both affinity rows and all classes of the squared
    target/fake affinity difference; averaged over the batch."""
    t, s, _ = _as_batch(target, layout)
    f, s2, _ = _as_batch(fake, layout)
    if t.shape != f.shape:
        raise ShapeMismatch(f"target {tuple(t.shape)} vs fake {tuple(f.shape)}")
    c_t = affinity_vector(t.to(f.dtype), s2, mode)
    c_f = affinity_vector(f, s2, mode)
    per_sample = ((c_t - c_f) ** 2).sum(dim=(1, 2))
    if reduction == "none":
        return per_sample
    return per_sample.mean()
