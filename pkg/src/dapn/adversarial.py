"""Conditional domain-adversarial losses.

``domain_confusion_loss`` is applied to the gated embedding through a gradient
reversal layer, so the discriminator learns to tell the domains apart while the
feature extractor learns to confuse it.  ``domain_discriminative_loss`` is
applied to the backbone features without reversal, so both sides minimise it.
Both discriminators see the features conditioned on the episode's prototype
softmax.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

ALIGN_MODES = ("pad", "sorted")


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad * -ctx.lam, None


def gradient_reversal(x: torch.Tensor, lam: float = 1.0) -> torch.Tensor:
    """Identity on the forward pass; multiplies the gradient by ``-lam``."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return _GradientReversal.apply(x, float(lam))


def grl_lambda(progress: float, gamma: float = 10.0) -> float:
    """Warm-up ramp ``2 / (1 + exp(-gamma p)) - 1`` from 0 to ~1."""
    return 2.0 / (1.0 + math.exp(-gamma * progress)) - 1.0


def entropy(g: torch.Tensor) -> torch.Tensor:
    """Shannon entropy along the last axis, with ``0 log 0 = 0``."""
    return -torch.special.xlogy(g, g).sum(-1)


def transfer_weight(h: torch.Tensor) -> torch.Tensor:
    return 1.0 + torch.exp(-h)


def align_predictions(g: torch.Tensor, n_classes: int,
                      mode: str = "pad") -> torch.Tensor:
    """Bring episode softmaxes of any width to ``n_classes`` columns.

    ``pad`` appends zero columns.  ``sorted`` orders each row by decreasing
    probability, keeps the top ``n_classes`` entries, renormalises and pads.
    """
    if mode not in ALIGN_MODES:
        raise ValueError(f"unknown align mode {mode!r}")
    width = g.shape[-1]
    if mode == "sorted":
        g = torch.sort(g, dim=-1, descending=True).values
        if width > n_classes:
            g = g[..., :n_classes]
            g = g / g.sum(-1, keepdim=True)
            width = n_classes
    if width > n_classes:
        raise ValueError(f"prediction width {width} exceeds {n_classes}")
    return F.pad(g, (0, n_classes - width))


def use_outer(d_f: int, d_g: int, d_feat: int) -> bool:
    return d_f * d_g <= d_feat


def condition(f: torch.Tensor, g: torch.Tensor, maps: "ConditioningMaps" = None,
              d_feat: int = 1024) -> torch.Tensor:
    """Condition features on predictions.

    Returns the row-major flattened outer product ``f (x) g`` when
    ``d_f * d_g <= d_feat``, else the randomized surrogate
    ``(R_f f) * (R_g g) / sqrt(d)``.  Accepts single vectors or batches.
    """
    single = f.dim() == 1
    if single:
        f, g = f[None], g[None]
    if f.shape[0] != g.shape[0]:
        raise ValueError(f"batch mismatch: {f.shape[0]} vs {g.shape[0]}")
    d_f, d_g = f.shape[1], g.shape[1]
    if use_outer(d_f, d_g, d_feat):
        out = (f[:, :, None] * g[:, None, :]).reshape(f.shape[0], d_f * d_g)
    else:
        if maps is None:
            raise ValueError("randomized conditioning needs ConditioningMaps")
        out = maps.randomized(f, g)
    return out[0] if single else out


class ConditioningMaps(nn.Module):
    """Fixed Gaussian projections ``R_f`` [d, d_f] and ``R_g`` [d, d_g]."""

    def __init__(self, d_f: int, d_g: int, d: int = 1024, seed: int = 0,
                 dtype=torch.float32):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.register_buffer("R_f", torch.randn(d, d_f, generator=gen,
                                                dtype=dtype))
        self.register_buffer("R_g", torch.randn(d, d_g, generator=gen,
                                                dtype=dtype))

    @property
    def d(self) -> int:
        return self.R_f.shape[0]

    def randomized(self, f, g):
        if f.shape[-1] != self.R_f.shape[1] or g.shape[-1] != self.R_g.shape[1]:
            raise ValueError(
                f"maps built for ({self.R_f.shape[1]}, {self.R_g.shape[1]}), "
                f"got ({f.shape[-1]}, {g.shape[-1]})")
        return (f @ self.R_f.T) * (g @ self.R_g.T) / math.sqrt(self.d)


class DomainDiscriminator(nn.Module):
    """Two-layer perceptron returning the logit of P(source)."""

    def __init__(self, in_dim: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(),
                                 nn.Linear(hidden, 1))

    def forward(self, x):
        return self.net(x).squeeze(-1)

    def prob(self, x):
        return torch.sigmoid(self(x))


class ConditionalDomainHead(nn.Module):
    """Conditioning map plus discriminator for one feature stage."""

    def __init__(self, feat_dim: int, n_classes: int, d_feat: int = 1024,
                 d: int = 1024, hidden: int = 256, seed: int = 0,
                 align: str = "pad"):
        super().__init__()
        if align not in ALIGN_MODES:
            raise ValueError(f"unknown align mode {align!r}")
        self.feat_dim, self.n_classes, self.d_feat = feat_dim, n_classes, d_feat
        self.align = align
        self.outer = use_outer(feat_dim, n_classes, d_feat)
        self.maps = None if self.outer else ConditioningMaps(
            feat_dim, n_classes, d, seed)
        in_dim = feat_dim * n_classes if self.outer else d
        self.discriminator = DomainDiscriminator(in_dim, hidden)

    def forward(self, f, g):
        g = align_predictions(g, self.n_classes, self.align)
        return self.discriminator(condition(f, g, self.maps, self.d_feat))


def _check_batches(*tensors):
    for t in tensors:
        if t.shape[0] == 0:
            raise ValueError("domain losses need non-empty source and "
                             "target batches")


def domain_confusion_loss(source_f, source_g, target_f, target_g,
                          head: ConditionalDomainHead, lam: float = 1.0,
                          weighted: bool = True) -> torch.Tensor:
    """Entropy-weighted conditional adversarial loss on reversed features.

    Predictions and their weights ``1 + exp(-H(g))`` are treated as constants.
    """
    _check_batches(source_f, target_f)
    source_g, target_g = source_g.detach(), target_g.detach()
    z_s = head(gradient_reversal(source_f, lam), source_g)
    z_t = head(gradient_reversal(target_f, lam), target_g)
    if weighted:
        w_s = transfer_weight(entropy(source_g))
        w_t = transfer_weight(entropy(target_g))
    else:
        w_s = torch.ones_like(z_s)
        w_t = torch.ones_like(z_t)
    return (-(w_s * F.logsigmoid(z_s)).mean()
            - (w_t * F.logsigmoid(-z_t)).mean())


def domain_discriminative_loss(source_f, source_g, target_f, target_g,
                               head: ConditionalDomainHead) -> torch.Tensor:
    """Plain conditional domain-classification loss, minimised jointly."""
    _check_batches(source_f, target_f)
    z_s = head(source_f, source_g.detach())
    z_t = head(target_f, target_g.detach())
    return -F.logsigmoid(z_s).mean() - F.logsigmoid(-z_t).mean()
