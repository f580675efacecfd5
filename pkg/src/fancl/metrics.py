"""Dice and HD95 per tumor region.

Distances are Euclidean in voxel units (unit spacing). Boundaries are the
foreground voxels with at least one 6-neighbour that is background or off-grid.
HD95 takes the 95th percentile (linear interpolation) of each directed
surface distance set and reports the larger of the two.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import REGIONS, compose_regions

HD95_EMPTY = 373.1287
_SIX = ndimage.generate_binary_structure(3, 1)


def _binary_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def dsc(pred, gt) -> float:
    pred, gt = _binary_pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((pred & gt).sum()) / total


def boundary_mask(mask) -> np.ndarray:
    mask = np.asarray(mask).astype(bool)
    interior = ndimage.binary_erosion(mask, structure=_SIX, border_value=0)
    return mask & ~interior


def boundary_points(mask) -> np.ndarray:
    """``(K, ndim)`` integer coordinates of the boundary voxels."""
    return np.argwhere(boundary_mask(mask))


def _directed(src: np.ndarray, dst_boundary: np.ndarray) -> np.ndarray:
    # distance from every voxel to the nearest boundary voxel of dst
    dist = ndimage.distance_transform_edt(~dst_boundary)
    return dist[src]


def hd95(pred, gt) -> float:
    pred, gt = _binary_pair(pred, gt)
    p_any, g_any = pred.any(), gt.any()
    if not p_any and not g_any:
        return 0.0
    if not p_any or not g_any:
        return HD95_EMPTY
    bp, bg = boundary_mask(pred), boundary_mask(gt)
    d_pg = _directed(bp, bg)
    d_gp = _directed(bg, bp)
    return float(max(np.percentile(d_pg, 95), np.percentile(d_gp, 95)))


def hd95_bruteforce(pred, gt) -> float:
    """All-pairs reference implementation of :func:`hd95`."""
    pred, gt = _binary_pair(pred, gt)
    if not pred.any() and not gt.any():
        return 0.0
    if not pred.any() or not gt.any():
        return HD95_EMPTY
    x = boundary_points(pred).astype(float)
    y = boundary_points(gt).astype(float)
    d = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1))
    return float(max(np.percentile(d.min(axis=1), 95), np.percentile(d.min(axis=0), 95)))


@dataclass
class MetricReport:
    dsc: dict[str, float]
    hd95: dict[str, float]
    sample_id: str | None = None
    mean_dsc: float = field(init=False)
    mean_hd95: float = field(init=False)

    def __post_init__(self):
        for r in REGIONS:
            if not 0.0 <= self.dsc[r] <= 1.0:
                raise ValueError(f"dsc[{r}]={self.dsc[r]} outside [0, 1]")
            if not 0.0 <= self.hd95[r] <= HD95_EMPTY:
                raise ValueError(f"hd95[{r}]={self.hd95[r]} outside [0, {HD95_EMPTY}]")
        self.mean_dsc = float(np.mean([self.dsc[r] for r in REGIONS]))
        self.mean_hd95 = float(np.mean([self.hd95[r] for r in REGIONS]))

    def rows(self) -> list[dict]:
        return [{"sample_id": self.sample_id, "region": r, "dsc": self.dsc[r], "hd95": self.hd95[r]} for r in REGIONS]

    def as_dict(self) -> dict:
        return {"sample_id": self.sample_id, "dsc": self.dsc, "hd95": self.hd95,
                "mean_dsc": self.mean_dsc, "mean_hd95": self.mean_hd95}


def evaluate_regions(pred, gt, sample_id: str | None = None) -> MetricReport:
    pr, gr = compose_regions(pred), compose_regions(gt)
    if pr.wt.shape != gr.wt.shape:
        raise ValueError(f"shape mismatch: {pr.wt.shape} vs {gr.wt.shape}")
    p, g = pr.as_dict(), gr.as_dict()
    return MetricReport(
        dsc={r: dsc(p[r], g[r]) for r in REGIONS},
        hd95={r: hd95(p[r], g[r]) for r in REGIONS},
        sample_id=sample_id,
    )


def aggregate(reports: list[MetricReport]) -> dict:
    out = {"n": len(reports)}
    for metric in ("dsc", "hd95"):
        per_region = {r: float(np.mean([getattr(rep, metric)[r] for rep in reports])) for r in REGIONS}
        out[metric] = per_region
        out[f"mean_{metric}"] = float(np.mean(list(per_region.values())))
    return out


def write_reports(reports: list[MetricReport], csv_path=None, json_path=None) -> None:
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["sample_id", "region", "dsc", "hd95"])
            writer.writeheader()
            for rep in reports:
                writer.writerows(rep.rows())
    if json_path:
        payload = {"samples": [r.as_dict() for r in reports], "aggregate": aggregate(reports)}
        Path(json_path).write_text(json.dumps(payload, indent=2))
