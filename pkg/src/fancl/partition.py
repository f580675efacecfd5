"""Patch partition of depth-spanning tiles and its exact inverse.

A ``(..., D, H, W)`` tensor is zero padded at the bottom/right so ``a | H`` and
``b | W``, then cut into ``1 x D x a x b`` tiles. Each tile becomes one column of
length ``D * a * b`` (flattened in ``(D, a, b)`` row-major order); columns are
ordered row-major over (H-tile, W-tile). Leading axes are carried through, so
channel and batch axes both work.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class PartitionSpec:
    a: int
    b: int
    pad_h: int
    pad_w: int
    orig_h: int
    orig_w: int

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ValueError(f"patch sizes must be >= 1, got a={self.a}, b={self.b}")
        if not (0 <= self.pad_h < self.a and 0 <= self.pad_w < self.b):
            raise ValueError("padding must be smaller than the patch size")
        if (self.orig_h + self.pad_h) % self.a or (self.orig_w + self.pad_w) % self.b:
            raise ValueError("padded dims are not divisible by the patch size")

    @classmethod
    def for_shape(cls, h: int, w: int, a: int, b: int) -> "PartitionSpec":
        if a < 1 or b < 1:
            raise ValueError(f"patch sizes must be >= 1, got a={a}, b={b}")
        return cls(a=a, b=b, pad_h=-h % a, pad_w=-w % b, orig_h=h, orig_w=w)

    @property
    def tiles_h(self) -> int:
        return (self.orig_h + self.pad_h) // self.a

    @property
    def tiles_w(self) -> int:
        return (self.orig_w + self.pad_w) // self.b

    @property
    def num_patches(self) -> int:
        return self.tiles_h * self.tiles_w


@dataclass(frozen=True)
class PatchMatrix:
    """Partitioned tensor, shape ``(..., D * a * b, num_patches)``."""

    data: torch.Tensor
    spec: PartitionSpec

    def __post_init__(self):
        if self.data.dim() < 2:
            raise ValueError("patch matrix needs at least two dims")
        if self.data.shape[-1] != self.spec.num_patches:
            raise ValueError(
                f"column count {self.data.shape[-1]} does not match spec ({self.spec.num_patches} patches)"
            )


def partition_tensor(x: torch.Tensor, spec: PartitionSpec) -> torch.Tensor:
    *lead, d, h, w = x.shape
    if (h, w) != (spec.orig_h, spec.orig_w):
        raise ValueError(f"tensor spatial dims {(h, w)} do not match spec {(spec.orig_h, spec.orig_w)}")
    if spec.pad_h or spec.pad_w:
        x = F.pad(x, (0, spec.pad_w, 0, spec.pad_h))
    a, b, th, tw = spec.a, spec.b, spec.tiles_h, spec.tiles_w
    x = x.reshape(*lead, d, th, a, tw, b)
    n = len(lead)
    # (..., D, th, a, tw, b) -> (..., D, a, b, th, tw)
    x = x.permute(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return x.reshape(*lead, d * a * b, th * tw)


def unpartition_tensor(p: torch.Tensor, spec: PartitionSpec, d_out: int) -> torch.Tensor:
    *lead, rows, cols = p.shape
    a, b, th, tw = spec.a, spec.b, spec.tiles_h, spec.tiles_w
    if cols != th * tw:
        raise ValueError(f"column count {cols} inconsistent with spec ({th * tw} patches)")
    if rows != d_out * a * b:
        raise ValueError(f"row count {rows} inconsistent with depth {d_out} and patch {a}x{b}")
    n = len(lead)
    x = p.reshape(*lead, d_out, a, b, th, tw)
    # (..., D, a, b, th, tw) -> (..., D, th, a, tw, b)
    x = x.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    x = x.reshape(*lead, d_out, th * a, tw * b)
    return x[..., : spec.orig_h, : spec.orig_w]


def partition(x: torch.Tensor, a: int, b: int) -> PatchMatrix:
    """Cut ``x`` of shape ``(..., D, H, W)`` into a column-per-patch matrix."""
    if x.dim() < 3:
        raise ValueError(f"expected (..., D, H, W), got shape {tuple(x.shape)}")
    spec = PartitionSpec.for_shape(x.shape[-2], x.shape[-1], a, b)
    return PatchMatrix(partition_tensor(x, spec), spec)


def unpartition(p: PatchMatrix, d_out: int) -> torch.Tensor:
    """Reassemble patches and crop the padding; exact inverse of :func:`partition`."""
    return unpartition_tensor(p.data, p.spec, d_out)
