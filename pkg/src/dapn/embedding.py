"""Backbone feature extractor and the domain-adaptive embedding module.

The embedding maps the backbone feature ``pre`` to ``auto`` through a
bottleneck autoencoder and gates it with ``sigmoid(FC(pre))``::

    gated = sigmoid(FC(pre)) * autoencoder(pre)
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Tuple

import torch
from torch import nn

ARCHITECTURES = ("small_conv4", "resnet18")
CHECKPOINT_FORMAT = 1


@dataclass
class BackboneConfig:
    architecture: str = "small_conv4"
    input_size: int = 84
    in_channels: int = 3
    output_dim: int = 512
    embedding_dim: int = 512
    bottleneck_dim: int = 256
    conv_widths: Tuple[int, ...] = (64, 128, 256, 512)

    def __post_init__(self):
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if min(self.output_dim, self.embedding_dim, self.bottleneck_dim) <= 0:
            raise ValueError("feature dimensions must be positive")
        if self.bottleneck_dim > self.embedding_dim:
            raise ValueError("bottleneck_dim must not exceed embedding_dim")
        if self.architecture == "small_conv4" and len(self.conv_widths) != 4:
            raise ValueError("small_conv4 needs exactly four conv widths")
        if self.architecture == "resnet18" and self.output_dim != 512:
            raise ValueError("resnet18 produces 512-d features")


class FeatureTriple(NamedTuple):
    pre: torch.Tensor    # backbone output, [B, output_dim]
    auto: torch.Tensor   # autoencoder output, [B, M]
    gated: torch.Tensor  # attention-gated embedding, [B, M]


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
                         nn.MaxPool2d(2))


class SmallConv4(nn.Module):
    """Four conv blocks followed by global average pooling."""

    def __init__(self, in_channels: int = 3,
                 widths: Tuple[int, ...] = (64, 128, 256, 512),
                 output_dim: int = 512):
        super().__init__()
        chans = (in_channels,) + tuple(widths)
        self.blocks = nn.Sequential(*[_conv_block(a, b)
                                      for a, b in zip(chans, chans[1:])])
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.proj = (nn.Identity() if widths[-1] == output_dim
                     else nn.Linear(widths[-1], output_dim))

    def forward(self, x):
        return self.proj(self.pool(self.blocks(x)).flatten(1))


def build_backbone(cfg: BackboneConfig) -> nn.Module:
    if cfg.architecture == "small_conv4":
        return SmallConv4(cfg.in_channels, cfg.conv_widths, cfg.output_dim)
    from torchvision.models import resnet18
    net = resnet18(weights=None)
    if cfg.in_channels != 3:
        net.conv1 = nn.Conv2d(cfg.in_channels, 64, 7, 2, 3, bias=False)
    net.fc = nn.Identity()
    return net


class Autoencoder(nn.Module):
    def __init__(self, in_dim: int, bottleneck_dim: int, out_dim: int):
        super().__init__()
        self.encoder = nn.Sequential(nn.Linear(in_dim, bottleneck_dim),
                                     nn.ReLU())
        self.decoder = nn.Linear(bottleneck_dim, out_dim)
        self.in_dim = in_dim

    def forward(self, pre):
        if pre.shape[-1] != self.in_dim:
            raise ValueError(f"autoencoder expects dim {self.in_dim}, "
                             f"got {pre.shape[-1]}")
        return self.decoder(self.encoder(pre))


class AttentionGate(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.fc = nn.Linear(in_dim, out_dim)

    def scores(self, pre):
        return torch.sigmoid(self.fc(pre))

    def forward(self, pre, auto):
        if pre.shape[0] != auto.shape[0]:
            raise ValueError(f"batch mismatch: {pre.shape[0]} vs "
                             f"{auto.shape[0]}")
        return self.scores(pre) * auto


class EmbeddingModule(nn.Module):
    def __init__(self, in_dim: int, embedding_dim: int, bottleneck_dim: int):
        super().__init__()
        self.autoencoder = Autoencoder(in_dim, bottleneck_dim, embedding_dim)
        self.gate = AttentionGate(in_dim, embedding_dim)

    def forward(self, pre) -> Tuple[torch.Tensor, torch.Tensor]:
        auto = self.autoencoder(pre)
        return auto, self.gate(pre, auto)


class FeatureNet(nn.Module):
    """Backbone + embedding module producing a :class:`FeatureTriple`."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = build_backbone(cfg)
        self.embedding = EmbeddingModule(cfg.output_dim, cfg.embedding_dim,
                                         cfg.bottleneck_dim)

    def extract_features(self, images: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(f"expected images [B, {expected[0]}, "
                             f"{expected[1]}, {expected[2]}], got "
                             f"{list(images.shape)}")
        if images.shape[0] == 0:
            p = next(self.parameters())
            return images.new_zeros((0, cfg.output_dim), dtype=p.dtype)
        return self.backbone(images)

    def forward(self, images: torch.Tensor) -> FeatureTriple:
        pre = self.extract_features(images)
        auto, gated = self.embedding(pre)
        return FeatureTriple(pre, auto, gated)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: os.PathLike, modules: Dict[str, nn.Module],
                    backbone_config: BackboneConfig,
                    extra: Dict[str, Any] = None) -> None:
    """Write one archive: ``state`` maps ``<module>.<param path>`` to tensors."""
    state = {}
    for name, module in modules.items():
        for key, tensor in module.state_dict().items():
            state[f"{name}.{key}"] = tensor.detach().cpu().clone()
    torch.save({"format": CHECKPOINT_FORMAT,
                "backbone_config": dataclasses.asdict(backbone_config),
                "state": state,
                "extra": dict(extra or {})}, path)


def load_checkpoint(path: os.PathLike) -> Dict[str, Any]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format "
                         f"{ckpt.get('format')!r}")
    ckpt["backbone_config"] = BackboneConfig(**ckpt["backbone_config"])
    return ckpt


def restore_module(module: nn.Module, state: Dict[str, torch.Tensor],
                   name: str) -> None:
    prefix = name + "."
    sub = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
    module.load_state_dict(sub)
