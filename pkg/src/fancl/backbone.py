"""Compact nnU-Net style 3D encoder-decoder.

Stage 0 runs at full resolution (stride 1) and its output is exposed as the
shallow feature map for the attention head. Each of the ``depth`` following
stages halves the grid with a stride-2 convolution and doubles the channels.
The decoder mirrors the encoder with transpose-conv upsampling and skip
concatenation. Every block is conv -> instance norm -> leaky ReLU, twice; the
convs carry no bias because the norm would cancel it.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class BackboneConfig:
    depth: int = 2
    base_channels: int = 8
    num_classes: int = 4
    in_modalities: int = 2
    max_channels: int = 256
    zero_init_head: bool = False

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"backbone depth must be >= 1 (at least one downsampling stage), got {self.depth}")
        if self.base_channels < 1 or self.num_classes < 1 or self.in_modalities < 1:
            raise ValueError("channel counts must be positive")

    @property
    def divisor(self) -> int:
        return 2**self.depth


@dataclass
class BackboneOutput:
    logits: torch.Tensor
    first_feature: torch.Tensor


class ConvBlock(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__(
            nn.Conv3d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False),
            nn.InstanceNorm3d(out_ch, affine=True),
            nn.LeakyReLU(0.01),
            nn.Conv3d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.InstanceNorm3d(out_ch, affine=True),
            nn.LeakyReLU(0.01),
        )


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        widths = [min(cfg.base_channels * 2**i, cfg.max_channels) for i in range(cfg.depth + 1)]
        self.widths = widths
        self.encoder = nn.ModuleList([ConvBlock(cfg.in_modalities, widths[0])])
        for i in range(1, cfg.depth + 1):
            self.encoder.append(ConvBlock(widths[i - 1], widths[i], stride=2))
        self.upsample = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for i in range(cfg.depth, 0, -1):
            self.upsample.append(nn.ConvTranspose3d(widths[i], widths[i - 1], 2, stride=2))
            self.decoder.append(ConvBlock(2 * widths[i - 1], widths[i - 1]))
        self.head = nn.Conv3d(widths[0], cfg.num_classes, 1)
        if cfg.zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    @property
    def num_downsamplings(self) -> int:
        return len(self.encoder) - 1

    def check_input(self, image: torch.Tensor) -> None:
        if image.dim() != 5:
            raise ValueError(f"expected (N, M, D, H, W), got shape {tuple(image.shape)}")
        if image.shape[1] != self.cfg.in_modalities:
            raise ValueError(f"expected {self.cfg.in_modalities} modalities, got {image.shape[1]}")
        div = self.cfg.divisor
        bad = [s for s in image.shape[2:] if s % div]
        if bad:
            raise ValueError(
                f"spatial dims {tuple(image.shape[2:])} must be divisible by 2**depth = {div} (depth={self.cfg.depth})"
            )

    def forward(self, image: torch.Tensor) -> BackboneOutput:
        squeeze = image.dim() == 4
        if squeeze:
            image = image.unsqueeze(0)
        self.check_input(image)
        skips = []
        x = image
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        first = skips[0]
        for up, block, skip in zip(self.upsample, self.decoder, reversed(skips[:-1])):
            x = block(torch.cat([up(x), skip], dim=1))
        logits = self.head(x)
        if squeeze:
            return BackboneOutput(logits[0], first[0])
        return BackboneOutput(logits, first)


def build_backbone(cfg: BackboneConfig, seed: int, dtype: torch.dtype = torch.float32) -> Backbone:
    """Deterministically initialised backbone; the global RNG is left untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = Backbone(cfg)
    return net.to(dtype)


def backbone_forward(net: Backbone, image: torch.Tensor) -> BackboneOutput:
    return net(image)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
