"""Feature-guided attention head.

The head correlates partitioned projections of the input image with a shallow
feature map (one matrix per class), uses that matrix to push a correction into
the baseline logits, and supplies the ground-truth ("golden") version of the
same matrix as a supervision target.

All tensors are batched, ``(N, C, D, H, W)``; unbatched inputs are accepted
and returned unbatched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import is_one_hot
from .partition import PartitionSpec, partition_tensor, unpartition_tensor


@dataclass
class FGAConfig:
    patch_a: int = 4
    patch_b: int = 4
    img_hidden: int = 64
    # Scale correlations by the patch volume and the correction by the number of
    # feature patches. Off reproduces the raw inner products.
    normalize: bool = False
    zero_init_tconv: bool = True


@dataclass
class AttentionMatrix:
    """Per-class correlation, ``data`` shaped ``(N, P_c, n_img_patches, n_fea_patches)``."""

    data: torch.Tensor
    img_spec: PartitionSpec
    fea_spec: PartitionSpec
    depth: int

    def __post_init__(self):
        if self.data.shape[-2:] != (self.img_spec.num_patches, self.fea_spec.num_patches):
            raise ValueError(
                f"attention dims {tuple(self.data.shape[-2:])} inconsistent with partition specs"
            )

    @property
    def shape(self):
        return self.data.shape


@dataclass
class AdjustedPrediction:
    logits: torch.Tensor
    correction: torch.Tensor
    baseline: torch.Tensor = field(repr=False)

    def __post_init__(self):
        expected = self.baseline + self.correction
        same = (self.logits == expected) | (self.logits.isnan() & expected.isnan())
        if self.logits.shape != expected.shape or not bool(same.all()):
            raise ValueError("adjusted logits must equal baseline + correction")


def _batched(x: torch.Tensor, ndim: int = 5) -> tuple[torch.Tensor, bool]:
    if x.dim() == ndim - 1:
        return x.unsqueeze(0), True
    if x.dim() != ndim:
        raise ValueError(f"expected a {ndim - 1}D or {ndim}D tensor, got shape {tuple(x.shape)}")
    return x, False


class FGAHead(nn.Module):
    """Image projection (7^3 conv to ``img_hidden`` then 3^3 conv to 1 channel),
    per-class feature projection (1^3 conv) and a size-preserving transpose conv."""

    def __init__(self, in_modalities: int, feature_channels: int, num_classes: int, cfg: FGAConfig | None = None):
        super().__init__()
        cfg = cfg or FGAConfig()
        self.cfg = cfg
        self.num_classes = num_classes
        self.conv_img = nn.Sequential(
            nn.Conv3d(in_modalities, cfg.img_hidden, kernel_size=7, padding=3),
            nn.Conv3d(cfg.img_hidden, 1, kernel_size=3, padding=1),
        )
        self.conv_fea = nn.Conv3d(feature_channels, num_classes, kernel_size=1)
        self.tconv = nn.ConvTranspose3d(num_classes, num_classes, kernel_size=3, stride=1, padding=1)
        if cfg.zero_init_tconv:
            nn.init.zeros_(self.tconv.weight)
            nn.init.zeros_(self.tconv.bias)

    @property
    def a(self) -> int:
        return self.cfg.patch_a

    @property
    def b(self) -> int:
        return self.cfg.patch_b

    def attention(self, image: torch.Tensor, feature: torch.Tensor) -> AttentionMatrix:
        image, squeeze = _batched(image)
        feature, _ = _batched(feature)
        c_img = self.conv_img(image)
        c_fea = self.conv_fea(feature)
        out = correlate(c_img, c_fea, self.a, self.b, normalize=self.cfg.normalize)
        if squeeze:
            return AttentionMatrix(out.data[0], out.img_spec, out.fea_spec, out.depth)
        return out

    def adjust(self, baseline_logits: torch.Tensor, fga: AttentionMatrix) -> AdjustedPrediction:
        logits, squeeze = _batched(baseline_logits)
        d, h, w = logits.shape[-3:]
        fea_spec, img_spec = fga.fea_spec, fga.img_spec
        fea_dims = (fga.depth, fea_spec.orig_h, fea_spec.orig_w)
        pooled = F.adaptive_avg_pool3d(logits, fea_dims) if (d, h, w) != fea_dims else logits
        s_pred = partition_tensor(pooled, fea_spec)
        attn = fga.data.unsqueeze(0) if fga.data.dim() == 3 else fga.data
        if s_pred.shape[-1] != attn.shape[-1] or s_pred.shape[1] != attn.shape[1]:
            raise ValueError("prediction patches do not match the attention matrix")
        # R^k = S^k_pred (F^k)^T
        r = torch.einsum("nkpj,nkij->nkpi", s_pred, attn)
        if self.cfg.normalize:
            r = r / fea_spec.num_patches
        restored = unpartition_tensor(r, img_spec, fga.depth)
        correction = self.tconv(restored)
        if correction.shape != logits.shape:
            correction = F.interpolate(correction, size=(d, h, w), mode="trilinear", align_corners=False)
        out = logits + correction
        if squeeze:
            return AdjustedPrediction(out[0], correction[0], logits[0])
        return AdjustedPrediction(out, correction, logits)

    def forward(self, image, feature, baseline_logits):
        fga = self.attention(image, feature)
        return self.adjust(baseline_logits, fga), fga


def correlate(c_img: torch.Tensor, c_fea: torch.Tensor, a: int, b: int, normalize: bool = False) -> AttentionMatrix:
    """``F^k = S_img^T S^k_fea`` for every class ``k``.

    ``c_img`` is ``(N, 1 or P_c, D', H~, W~)``; a single image channel is shared
    by all classes, otherwise channel ``k`` pairs with class ``k``.
    """
    if c_img.shape[-3] != c_fea.shape[-3]:
        raise ValueError(
            f"depth mismatch between image projection ({c_img.shape[-3]}) and feature ({c_fea.shape[-3]})"
        )
    img_spec = PartitionSpec.for_shape(c_img.shape[-2], c_img.shape[-1], a, b)
    fea_spec = PartitionSpec.for_shape(c_fea.shape[-2], c_fea.shape[-1], a, b)
    s_img = partition_tensor(c_img, img_spec)
    s_fea = partition_tensor(c_fea, fea_spec)
    data = torch.einsum("nkpi,nkpj->nkij", s_img.expand(-1, s_fea.shape[1], -1, -1), s_fea)
    if normalize:
        data = data / s_img.shape[-2]
    return AttentionMatrix(data, img_spec, fea_spec, depth=c_img.shape[-3])


def fga_forward(head: FGAHead, image: torch.Tensor, feature: torch.Tensor) -> AttentionMatrix:
    return head.attention(image, feature)


def fga_adjust(head: FGAHead, baseline_logits: torch.Tensor, fga: AttentionMatrix) -> AdjustedPrediction:
    return head.adjust(baseline_logits, fga)


def gfga_target(
    gt: torch.Tensor,
    spec: PartitionSpec,
    depth: int | None = None,
    fea_dims: tuple[int, int, int] | None = None,
    normalize: bool = False,
) -> AttentionMatrix:
    """Golden attention computed from a one-hot ground truth.

    The image-side factor is a fixed average resampling of ``gt`` to
    ``(depth, spec.orig_h, spec.orig_w)``; the feature-side factor is ``gt``
    average pooled to ``fea_dims``. Both default to the ground-truth grid. The
    result carries no gradient.
    """
    gt, squeeze = _batched(gt)
    if not is_one_hot(gt, class_dim=1):
        raise ValueError("gfga_target expects a one-hot ground truth")
    with torch.no_grad():
        gt = gt.to(torch.get_default_dtype()) if not gt.is_floating_point() else gt
        d = depth if depth is not None else gt.shape[-3]
        img_dims = (d, spec.orig_h, spec.orig_w)
        fea_dims = fea_dims or (d, *gt.shape[-2:])
        c_gt = gt if tuple(gt.shape[-3:]) == img_dims else F.adaptive_avg_pool3d(gt, img_dims)
        a_gt = gt if tuple(gt.shape[-3:]) == fea_dims else F.adaptive_avg_pool3d(gt, fea_dims)
        out = correlate(c_gt, a_gt, spec.a, spec.b, normalize=normalize)
    if squeeze:
        return AttentionMatrix(out.data[0], out.img_spec, out.fea_spec, out.depth)
    return out
