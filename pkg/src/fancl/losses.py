"""Segmentation and attention losses.

``probs`` and one-hot targets are ``(C, D, H, W)`` or batched ``(N, C, D, H, W)``.
Dice sums run over every non-class axis (batch included), matching the
whole-batch Dice used by nnU-Net style trainers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

PROB_FLOOR = 1e-12


class NonFiniteError(ValueError):
    """A loss input or component is NaN or infinite."""


@dataclass
class LossConfig:
    epsilon: float = 1e-5
    reduction: str = "voxel-mean"  # or "sum"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.reduction not in ("voxel-mean", "sum"):
            raise ValueError(f"unknown CE reduction {self.reduction!r}")


@dataclass
class LossReport:
    dice: float
    ce: float
    l_cur: float
    l_gt: float
    l_fga: float
    total: float
    stage: int

    def __post_init__(self):
        if abs(self.total - (self.l_cur + self.l_gt + self.l_fga)) > 1e-9 * max(1.0, abs(self.total)):
            raise ValueError("total must equal l_cur + l_gt + l_fga")

    def as_dict(self) -> dict:
        return asdict(self)


def _check_pair(probs: torch.Tensor, target: torch.Tensor) -> None:
    if probs.shape != target.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs target {tuple(target.shape)}")
    if probs.dim() not in (4, 5):
        raise ValueError(f"expected (C, D, H, W) or (N, C, D, H, W), got {tuple(probs.shape)}")
    if torch.isnan(probs).any():
        raise NonFiniteError("probabilities contain NaN")


def _class_axis(x: torch.Tensor) -> int:
    return 0 if x.dim() == 4 else 1


def dice_loss(probs: torch.Tensor, target: torch.Tensor, epsilon: float = 1e-5) -> torch.Tensor:
    """``-(2/C) sum_c (sum y*p + eps) / (sum (y + p) + eps)``; lies in [-2, 0)."""
    _check_pair(probs, target)
    target = target.to(probs.dtype)
    c_ax = _class_axis(probs)
    dims = [d for d in range(probs.dim()) if d != c_ax]
    inter = (probs * target).sum(dim=dims)
    denom = (probs + target).sum(dim=dims)
    ratio = (inter + epsilon) / (denom + epsilon)
    return -2.0 * ratio.sum() / probs.shape[c_ax]


def ce_loss(probs: torch.Tensor, target: torch.Tensor, reduction: str = "voxel-mean") -> torch.Tensor:
    """Cross entropy ``-sum y log p``; ``voxel-mean`` divides by the voxel count."""
    _check_pair(probs, target)
    target = target.to(probs.dtype)
    total = -(target * torch.log(probs.clamp_min(PROB_FLOOR))).sum()
    if reduction == "sum":
        return total
    if reduction == "voxel-mean":
        return total / (probs.numel() // probs.shape[_class_axis(probs)])
    raise ValueError(f"unknown CE reduction {reduction!r}")


def dice_ce(probs: torch.Tensor, target: torch.Tensor, cfg: LossConfig | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    cfg = cfg or LossConfig()
    return dice_loss(probs, target, cfg.epsilon), ce_loss(probs, target, cfg.reduction)


def seg_loss(probs, curriculum_mask, gt, cfg: LossConfig | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Curriculum term and ground-truth term, each Dice + CE."""
    d_cur, c_cur = dice_ce(probs, curriculum_mask, cfg)
    d_gt, c_gt = dice_ce(probs, gt, cfg)
    return d_cur + c_cur, d_gt + c_gt


def fga_loss(fga, gfga) -> torch.Tensor:
    """Mean squared difference between the predicted and golden attention."""
    fga = fga if torch.is_tensor(fga) else fga.data
    gfga = gfga if torch.is_tensor(gfga) else gfga.data
    if fga.shape != gfga.shape:
        raise ValueError(f"attention shape mismatch: {tuple(fga.shape)} vs {tuple(gfga.shape)}")
    return ((fga - gfga.to(fga.dtype)) ** 2).mean()


def total_loss(l_cur, l_gt, l_fga, stage: int = 0, dice=None, ce=None) -> LossReport:
    parts = {"l_cur": l_cur, "l_gt": l_gt, "l_fga": l_fga}
    values = {}
    for name, v in parts.items():
        v = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(v):
            raise NonFiniteError(f"non-finite loss component {name}={v}")
        values[name] = v
    total = values["l_cur"] + values["l_gt"] + values["l_fga"]
    return LossReport(
        dice=_scalar(dice),
        ce=_scalar(ce),
        total=total,
        stage=stage,
        **values,
    )


def _scalar(v) -> float:
    if v is None:
        return float("nan")
    return float(v.detach()) if torch.is_tensor(v) else float(v)
