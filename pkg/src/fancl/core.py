"""Volumetric data conventions: label masks, one-hot encoding and tumor regions.

Layouts used throughout the package:

* multimodal volume: ``(M, D, H, W)`` float, or ``(N, M, D, H, W)`` when batched
* label mask: ``(D, H, W)`` integer labels in ``{0, ..., num_classes - 1}``
* one-hot mask: ``(num_classes, D, H, W)`` with exactly one 1 per voxel

Label semantics follow the brain-metastasis convention: 0 background,
1 nonenhancing tumor, 2 peritumoral edema, 3 enhancing tumor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

BACKGROUND = 0
NONENHANCING = 1
EDEMA = 2
ENHANCING = 3
DEFAULT_NUM_CLASSES = 4

REGIONS = ("et", "tc", "wt")


class LabelError(ValueError):
    """A label mask violates its value range or shape contract."""


def validate_volume(volume) -> None:
    """Check the (M, D, H, W) multimodal volume invariants."""
    shape = tuple(volume.shape)
    if len(shape) != 4:
        raise ValueError(f"volume must have shape (M, D, H, W), got {shape}")
    if min(shape) < 1:
        raise ValueError(f"volume dims must be >= 1, got {shape}")
    finite = torch.isfinite(volume).all() if torch.is_tensor(volume) else np.isfinite(volume).all()
    if not bool(finite):
        raise ValueError("volume contains non-finite entries")


def validate_labels(mask, num_classes: int) -> None:
    if torch.is_tensor(mask):
        if mask.is_floating_point():
            raise LabelError(f"label mask must be integer typed, got {mask.dtype}")
        lo, hi = (int(mask.min()), int(mask.max())) if mask.numel() else (0, 0)
    else:
        mask = np.asarray(mask)
        if not np.issubdtype(mask.dtype, np.integer):
            raise LabelError(f"label mask must be integer typed, got {mask.dtype}")
        lo, hi = (int(mask.min()), int(mask.max())) if mask.size else (0, 0)
    if lo < 0:
        raise LabelError(f"negative label value {lo}")
    if hi >= num_classes:
        raise LabelError(f"label value {hi} out of range for num_classes={num_classes}")


def one_hot(mask, num_classes: int) -> torch.Tensor:
    """Encode integer labels as a channel-first binary tensor.

    ``mask`` may be ``(D, H, W)`` or batched ``(N, D, H, W)``; the class axis is
    inserted right before the spatial axes. Returns float64 so the result can
    enter losses directly; cast as needed.
    """
    if num_classes < 1:
        raise ValueError(f"num_classes must be positive, got {num_classes}")
    mask = torch.as_tensor(np.asarray(mask) if not torch.is_tensor(mask) else mask)
    validate_labels(mask, num_classes)
    encoded = torch.nn.functional.one_hot(mask.long(), num_classes)
    return encoded.movedim(-1, -4).to(torch.float64)


def is_one_hot(x: torch.Tensor, class_dim: int = -4) -> bool:
    binary = bool(((x == 0) | (x == 1)).all())
    return binary and bool((x.sum(dim=class_dim) == 1).all())


@dataclass(frozen=True)
class RegionMasks:
    """Binary evaluation regions; always nested ``et <= tc <= wt``."""

    et: np.ndarray
    tc: np.ndarray
    wt: np.ndarray

    def __post_init__(self):
        if np.any(self.et & ~self.tc) or np.any(self.tc & ~self.wt):
            raise ValueError("region masks violate et <= tc <= wt")

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"et": self.et, "tc": self.tc, "wt": self.wt}


def compose_regions(mask) -> RegionMasks:
    """Derive ET (3), TC (1+3) and WT (1+2+3) from a label mask."""
    mask = mask.cpu().numpy() if torch.is_tensor(mask) else np.asarray(mask)
    validate_labels(mask, DEFAULT_NUM_CLASSES)
    et = mask == ENHANCING
    tc = et | (mask == NONENHANCING)
    wt = tc | (mask == EDEMA)
    return RegionMasks(et=et, tc=tc, wt=wt)
