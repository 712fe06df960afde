"""Adversarial, content, perceptual and parsing losses, and their weighted sum.

The adaptive re-weighting term lives in :mod:`facesketch.arweight`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import NonFinite, ShapeMismatch

BCE_EPS = 1e-7
TERMS = ("gan", "content", "ar", "perceptual", "bce")


@dataclass
class LossWeights:
    alpha: float = 100.0  # content
    lam: float = 100.0  # adaptive re-weighting
    delta: float = 1.0  # perceptual
    eta: float = 10.0  # parsing BCE

    def __post_init__(self):
        for name in ("alpha", "lam", "delta", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")

    def for_term(self, term):
        return {"gan": 1.0, "content": self.alpha, "ar": self.lam,
                "perceptual": self.delta, "bce": self.eta}[term]


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def adversarial_d(real_logits, fake_logits):
    """Discriminator loss: real patches toward 1, fake patches toward 0."""
    _check_same(real_logits, fake_logits, "adversarial_d")
    real = F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
    fake = F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    return real + fake


def adversarial_g(fake_logits, literal=False):
    """Generator adversarial loss.

    The default non-saturating form pushes fake logits toward the real label.
    ``literal=True`` returns the mean of log(1 - D), the minimax objective as
    written, which is non-positive.
    """
    if literal:
        return -F.softplus(fake_logits).mean()
    return F.binary_cross_entropy_with_logits(fake_logits, torch.ones_like(fake_logits))


def content_loss(target, fake):
    _check_same(target, fake, "content_loss")
    return (target - fake).abs().mean()


def perceptual_loss(target, fake, extractor):
    _check_same(target, fake, "perceptual_loss")
    with torch.no_grad():
        feats_t = extractor(target)
    feats_f = extractor(fake)
    total = 0.0
    for ft, ff in zip(feats_t, feats_f):
        total = total + ((ft - ff) ** 2).mean()
    return total


def bce_parsing_loss(target, fake, oracle, eps=BCE_EPS):
    """Per-pixel, per-class BCE of the parse of ``fake`` against the parse of
    ``target`` used as a soft label."""
    _check_same(target, fake, "bce_parsing_loss")
    with torch.no_grad():
        q = oracle(target).clamp(eps, 1 - eps)
    p = oracle(fake).clamp(eps, 1 - eps)
    return -(q * torch.log(p) + (1 - q) * torch.log1p(-p)).mean()


def total_generator_loss(terms, weights=None):
    """Weighted generator objective.

    ``terms`` maps names from ``TERMS`` to scalars (missing names count as
    zero).  Returns the total and a float breakdown including ``total``.
    """
    weights = weights or LossWeights()
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    total = 0.0
    breakdown = {}
    for name in TERMS:
        value = terms.get(name, 0.0)
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise NonFinite(name)
        breakdown[name] = v
        total = total + weights.for_term(name) * value
    v = float(total.detach()) if torch.is_tensor(total) else float(total)
    if not math.isfinite(v):
        raise NonFinite("total")
    breakdown["total"] = v
    return total, breakdown
