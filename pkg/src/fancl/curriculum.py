"""Voxel-level curricula mined from backbones of increasing depth.

Stage ``t`` keeps the ground-truth label wherever the depth-``t`` mining network
agreed with it on a foreground voxel, plus everything already kept at stage
``t - 1``. Voxels not covered yet are background in the curriculum mask.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.io import content_hash, read_arrays, write_arrays


@dataclass
class StageSchedule:
    epochs_per_stage: tuple[int, ...] = (10, 10, 30)

    def __post_init__(self):
        self.epochs_per_stage = tuple(int(e) for e in self.epochs_per_stage)
        if not self.epochs_per_stage or min(self.epochs_per_stage) < 1:
            raise ValueError(f"every stage needs at least one epoch, got {self.epochs_per_stage}")

    @property
    def num_stages(self) -> int:
        return len(self.epochs_per_stage)

    @property
    def total_epochs(self) -> int:
        return sum(self.epochs_per_stage)

    def boundaries(self) -> list[int]:
        """First epoch of every stage after the first."""
        return list(np.cumsum(self.epochs_per_stage)[:-1].tolist())


FULL_SCALE_SCHEDULE = StageSchedule((80, 80, 340))


def stage_for_epoch(schedule: StageSchedule, epoch: int) -> int:
    """1-based stage whose epoch interval contains ``epoch``."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside schedule range [0, {schedule.total_epochs})")
    return int(np.searchsorted(np.cumsum(schedule.epochs_per_stage), epoch, side="right")) + 1


@dataclass
class MiningOutputs:
    """Held-out predictions for one sample, shallowest network first."""

    masks: list[np.ndarray]
    provenance: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.masks:
            raise ValueError("need at least one mining output")
        shape = self.masks[0].shape
        if any(m.shape != shape for m in self.masks):
            raise ValueError("mining outputs must share one grid")


@dataclass
class CurriculumSet:
    stages: list[np.ndarray]
    gt: np.ndarray

    def __post_init__(self):
        check_curriculum(self.stages, self.gt)

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    def stage(self, t: int) -> np.ndarray:
        """Mask for 1-based stage ``t``."""
        return self.stages[t - 1]


def check_curriculum(stages: Sequence[np.ndarray], gt: np.ndarray) -> None:
    prev = np.zeros(gt.shape, dtype=bool)
    for t, c in enumerate(stages, start=1):
        if c.shape != gt.shape:
            raise ValueError(f"stage {t} shape {c.shape} differs from gt {gt.shape}")
        support = c != 0
        if np.any(c[support] != gt[support]):
            raise ValueError(f"stage {t} disagrees with the ground truth on its support")
        if np.any(prev & ~support):
            raise ValueError(f"stage {t} does not contain stage {t - 1}")
        prev = support


def build_curriculum(outputs, gt: np.ndarray) -> CurriculumSet:
    masks = outputs.masks if isinstance(outputs, MiningOutputs) else list(outputs)
    gt = np.asarray(gt)
    stages = []
    covered = np.zeros(gt.shape, dtype=bool)
    for t, pred in enumerate(masks, start=1):
        pred = np.asarray(pred)
        if pred.shape != gt.shape:
            raise ValueError(f"mining output {t} shape {pred.shape} differs from gt {gt.shape}")
        covered = covered | ((pred == gt) & (gt != 0))
        stages.append(np.where(covered, gt, 0).astype(gt.dtype))
    return CurriculumSet(stages=stages, gt=gt)


@dataclass
class MiningConfig:
    depths: tuple[int, ...] = (2, 3, 4)
    folds: int = 5
    epochs: int = 100
    base_channels: int = 8
    lr0: float = 0.01
    momentum: float = 0.99
    poly_exponent: float = 0.9
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        if self.folds < 2:
            raise ValueError(f"mining needs at least 2 folds, got {self.folds}")
        if not self.depths or any(b <= a for a, b in zip(self.depths, self.depths[1:])):
            raise ValueError(f"mining depths must be strictly increasing, got {self.depths}")


def mine_outputs(dataset: Sequence, depths=None, folds=None, mining_cfg: MiningConfig | None = None,
                 num_classes: int = 4, dtype=None, progress=None) -> dict[str, MiningOutputs]:
    """Cross-validated predictions at every mining depth.

    For each depth a fresh backbone is trained on every fold's training split and
    predicts that fold's held-out samples, so each sample gets exactly one
    prediction per depth from a model that never saw it.
    """
    import torch

    from .backbone import BackboneConfig, build_backbone
    from .training import fit_backbone, kfold_split, predict_labels

    cfg = mining_cfg or MiningConfig()
    if depths is not None or folds is not None:
        cfg = MiningConfig(**{**asdict(cfg), **({"depths": tuple(depths)} if depths is not None else {}),
                              **({"folds": folds} if folds is not None else {})})
    dtype = dtype or torch.float32
    splits = kfold_split(len(dataset), cfg.folds, cfg.seed)
    masks: dict[str, list] = {rec.sample_id: [] for rec in dataset}
    prov: dict[str, list] = {rec.sample_id: [] for rec in dataset}
    m = dataset[0].volume.shape[0]
    for depth in cfg.depths:
        for fold, (train_ids, val_ids) in enumerate(splits):
            bcfg = BackboneConfig(depth=depth, base_channels=cfg.base_channels, num_classes=num_classes, in_modalities=m)
            net = build_backbone(bcfg, seed=cfg.seed * 1000 + depth * 10 + fold, dtype=dtype)
            fit_backbone(
                net, [dataset[i] for i in train_ids], epochs=cfg.epochs, lr0=cfg.lr0, momentum=cfg.momentum,
                poly_exponent=cfg.poly_exponent, batch_size=cfg.batch_size, seed=cfg.seed + fold,
            )
            for i in val_ids:
                rec = dataset[i]
                masks[rec.sample_id].append(predict_labels(net, rec.volume))
                prov[rec.sample_id].append(
                    {"depth": depth, "fold": fold, "train_ids": [dataset[j].sample_id for j in train_ids]}
                )
            if progress:
                progress(depth, fold)
    return {sid: MiningOutputs(masks[sid], prov[sid]) for sid in masks}


def curriculum_hash(curricula: dict[str, CurriculumSet], stage: int) -> str:
    """Digest identifying the stage-``stage`` curriculum across all samples."""
    h = hashlib.sha256(f"stage={stage}".encode())
    for sid in sorted(curricula):
        h.update(sid.encode())
        h.update(content_hash(curricula[sid].stage(stage)).encode())
    return h.hexdigest()[:16]


def save_curricula(directory, curricula: dict[str, CurriculumSet], provenance: dict[str, list] | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    samples = []
    for sid in sorted(curricula):
        cur = curricula[sid]
        stages = []
        for t, mask in enumerate(cur.stages, start=1):
            fname = f"{sid}_stage{t}.f3d"
            write_arrays(directory / fname, {"mask": mask}, meta={"sample_id": sid, "stage": t}, roles={"mask": "labels"})
            stages.append({"stage": t, "file": fname, "hash": content_hash(mask),
                           "provenance": (provenance or {}).get(sid, [None] * cur.num_stages)[t - 1]})
        gt_name = f"{sid}_gt.f3d"
        write_arrays(directory / gt_name, {"mask": cur.gt}, meta={"sample_id": sid}, roles={"mask": "labels"})
        samples.append({"sample_id": sid, "gt_file": gt_name, "gt_hash": content_hash(cur.gt), "stages": stages})
    manifest = {"num_stages": len(samples[0]["stages"]) if samples else 0, "samples": samples}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_curricula(directory) -> dict[str, CurriculumSet]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {}
    for entry in manifest["samples"]:
        gt = read_arrays(directory / entry["gt_file"])[0]["mask"]
        stages = []
        for st in sorted(entry["stages"], key=lambda s: s["stage"]):
            mask = read_arrays(directory / st["file"])[0]["mask"]
            if content_hash(mask) != st["hash"]:
                raise ValueError(f"content hash mismatch for {st['file']}")
            stages.append(mask)
        out[entry["sample_id"]] = CurriculumSet(stages, gt)
    return out
