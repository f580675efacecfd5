"""Staged training with curriculum switching, checkpointing and evaluation."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .backbone import Backbone, BackboneConfig, build_backbone
from .core import one_hot
from .curriculum import CurriculumSet, MiningConfig, StageSchedule, curriculum_hash, stage_for_epoch
from .fga import FGAConfig, FGAHead, gfga_target
from .losses import LossConfig, NonFiniteError, dice_ce, fga_loss, total_loss
from .metrics import MetricReport, aggregate, evaluate_regions
from .training import clip_gradients, epoch_batches, kfold_split, make_optimizer, poly_lr, set_lr, stack_batch

__all__ = [
    "TrainConfig", "FANCLModel", "TrainingDiverged", "train", "evaluate", "evaluate_predictions",
    "infer", "load_checkpoint", "kfold_split", "poly_lr",
]

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "step", "stage", "dice", "ce", "l_cur", "l_gt", "l_fga", "total", "lr", "curriculum_hash"]
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    epochs_total: int = 50
    schedule: StageSchedule = field(default_factory=StageSchedule)
    lr0: float = 0.01
    momentum: float = 0.99
    poly_exponent: float = 0.9
    batch_size: int = 2
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float = 12.0
    dtype: str = "float32"
    loss: LossConfig = field(default_factory=LossConfig)
    fga: FGAConfig = field(default_factory=lambda: FGAConfig(normalize=True))
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)

    def __post_init__(self):
        if self.schedule.total_epochs != self.epochs_total:
            raise ValueError(
                f"schedule {self.schedule.epochs_per_stage} sums to {self.schedule.total_epochs}, "
                f"epochs_total is {self.epochs_total}"
            )
        if not self.lr0 > 0:
            raise ValueError("lr0 must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        base = dict(epochs_total=500, schedule=StageSchedule((80, 80, 340)),
                    fga=FGAConfig(patch_a=8, patch_b=8, normalize=True), mining=MiningConfig(epochs=100, folds=5))
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        nested = {"schedule": StageSchedule, "loss": LossConfig, "fga": FGAConfig,
                  "backbone": BackboneConfig, "mining": MiningConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        if "schedule" in d and isinstance(d["schedule"], (list, tuple)):
            d["schedule"] = StageSchedule(tuple(d["schedule"]))
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


class FANCLModel(nn.Module):
    """Backbone plus attention head; returns adjusted prediction and attention matrix."""

    def __init__(self, backbone: Backbone, head: FGAHead):
        super().__init__()
        self.backbone = backbone
        self.head = head

    @classmethod
    def build(cls, cfg: TrainConfig) -> "FANCLModel":
        bcfg = cfg.backbone
        backbone = build_backbone(bcfg, cfg.seed, dtype=cfg.torch_dtype)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed + 1)
            head = FGAHead(bcfg.in_modalities, bcfg.base_channels, bcfg.num_classes, cfg.fga)
        return cls(backbone, head.to(cfg.torch_dtype))

    def forward(self, image: torch.Tensor):
        out = self.backbone(image)
        adjusted, fga = self.head(image, out.first_feature, out.logits)
        return adjusted, fga, out


def fancl_loss(model: FANCLModel, image, labels, curriculum, cfg: TrainConfig):
    """Full objective on one batch; returns (total tensor, component dict)."""
    dtype = next(model.parameters()).dtype
    pc = cfg.backbone.num_classes
    adjusted, fga, _ = model(image)
    probs = torch.softmax(adjusted.logits, dim=1)
    gt = one_hot(labels, pc).to(dtype)
    cur = one_hot(curriculum, pc).to(dtype)
    d_cur, c_cur = dice_ce(probs, cur, cfg.loss)
    d_gt, c_gt = dice_ce(probs, gt, cfg.loss)
    gfga = gfga_target(gt, fga.img_spec, depth=fga.depth, normalize=cfg.fga.normalize)
    l_fga = fga_loss(fga, gfga)
    l_cur, l_gt = d_cur + c_cur, d_gt + c_gt
    total = l_cur + l_gt + l_fga
    parts = {"dice": d_cur + d_gt, "ce": c_cur + c_gt, "l_cur": l_cur, "l_gt": l_gt, "l_fga": l_fga}
    return total, parts


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Path | None):
        super().__init__(f"{message}; last good checkpoint: {last_checkpoint}")
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    model: FANCLModel
    checkpoint: Path | None
    rows: list[dict]
    checkpoints: list[Path]


def _check_inputs(cfg: TrainConfig, dataset: Sequence, curricula: dict[str, CurriculumSet]) -> None:
    if not dataset:
        raise ValueError("empty dataset")
    missing = [r.sample_id for r in dataset if r.sample_id not in curricula]
    if missing:
        raise ValueError(f"no curriculum for samples {missing}")
    for rec in dataset:
        cur = curricula[rec.sample_id]
        if cur.num_stages != cfg.schedule.num_stages:
            raise ValueError(
                f"curriculum for {rec.sample_id} has {cur.num_stages} stages, schedule has {cfg.schedule.num_stages}"
            )
        if cur.gt.shape != rec.mask.shape or not np.array_equal(cur.gt, rec.mask):
            raise ValueError(f"curriculum ground truth for {rec.sample_id} does not match the dataset mask")
    div = cfg.backbone.divisor
    if any(s % div for s in dataset[0].mask.shape):
        raise ValueError(f"volume dims {dataset[0].mask.shape} must be divisible by {div}")
    if dataset[0].volume.shape[0] != cfg.backbone.in_modalities:
        raise ValueError("modality count does not match backbone config")


def save_checkpoint(path, model: FANCLModel, optimizer, cfg: TrainConfig, epoch: int, stage: int, dims) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "stage": stage,
        "rng_state": torch.get_rng_state(),
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "dims": list(dims),
    }
    torch.save(state, path)
    manifest = {
        "format": "fancl-checkpoint",
        "version": 1,
        "file": path.name,
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "epoch": epoch,
        "stage": stage,
        "config_hash": state["config_hash"],
        "dims": list(dims),
        "parameters": {k: list(v.shape) for k, v in state["model"].items()},
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path) -> tuple[dict, TrainConfig, FANCLModel]:
    path = Path(path)
    state = torch.load(path, map_location="cpu", weights_only=False)
    cfg = TrainConfig.from_dict(state["config"])
    if cfg.config_hash() != state["config_hash"]:
        raise ValueError(f"{path}: stored config does not match its hash")
    model = FANCLModel.build(cfg)
    model.load_state_dict(state["model"])
    return state, cfg, model


def _write_log(path: Path, rows: list[dict], append: bool) -> None:
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        if mode == "w":
            writer.writeheader()
        writer.writerows(rows)


def train(
    config: TrainConfig,
    dataset: Sequence,
    curricula: dict[str, CurriculumSet],
    out_dir=None,
    resume_from=None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Run the staged schedule. ``stop_after_epoch`` ends early (for tests of resumption)."""
    _check_inputs(config, dataset, curricula)
    out_dir = Path(out_dir) if out_dir else None
    dtype = config.torch_dtype
    dims = dataset[0].mask.shape
    if resume_from is not None:
        state, saved_cfg, model = load_checkpoint(resume_from)
        if saved_cfg.config_hash() != config.config_hash():
            raise ValueError("resume checkpoint was produced with a different config")
        optimizer = make_optimizer(model.parameters(), config.lr0, config.momentum, config.weight_decay)
        optimizer.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["rng_state"])
        start_epoch = state["epoch"]
    else:
        model = FANCLModel.build(config)
        optimizer = make_optimizer(model.parameters(), config.lr0, config.momentum, config.weight_decay)
        start_epoch = 0

    hashes = {t: curriculum_hash(curricula, t) for t in range(1, config.schedule.num_stages + 1)}
    boundaries = set(config.schedule.boundaries())
    rows: list[dict] = []
    checkpoints: list[Path] = []
    last_good: Path | None = Path(resume_from) if resume_from else None
    step = start_epoch * math.ceil(len(dataset) / config.batch_size)
    end_epoch = config.epochs_total if stop_after_epoch is None else min(stop_after_epoch, config.epochs_total)
    model.train()
    for epoch in range(start_epoch, end_epoch):
        stage = stage_for_epoch(config.schedule, epoch)
        lr = poly_lr(config.lr0, epoch, config.epochs_total, config.poly_exponent)
        set_lr(optimizer, lr)
        for ids in epoch_batches(len(dataset), config.batch_size, config.seed, epoch):
            image, labels = stack_batch(dataset, ids, dtype)
            cur = torch.stack([torch.as_tensor(curricula[dataset[i].sample_id].stage(stage).astype(np.int64)) for i in ids])
            try:
                total, parts = fancl_loss(model, image, labels, cur, config)
                report = total_loss(parts["l_cur"], parts["l_gt"], parts["l_fga"], stage=stage,
                                    dice=parts["dice"], ce=parts["ce"])
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch} step {step}: {exc}", last_good) from None
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            clip_gradients(model.parameters(), config.grad_clip)
            optimizer.step()
            row = {"epoch": epoch, "step": step, **report.as_dict(), "lr": lr, "curriculum_hash": hashes[stage]}
            rows.append({k: row[k] for k in LOG_COLUMNS})
            step += 1
        log.info("epoch %d stage %d loss %.4f lr %.5f", epoch, stage, rows[-1]["total"], lr)
        finished = epoch + 1
        if out_dir and (finished in boundaries or finished == config.epochs_total):
            ckpt = save_checkpoint(out_dir / f"checkpoint_epoch{finished:04d}.pt", model, optimizer, config,
                                   finished, stage, dims)
            checkpoints.append(ckpt)
            last_good = ckpt
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_log(out_dir / "train_log.csv", rows, append=resume_from is not None)
    return TrainResult(model=model, checkpoint=last_good, rows=rows, checkpoints=checkpoints)


@torch.no_grad()
def predict(model: FANCLModel, volume) -> np.ndarray:
    """Argmax of the softmax of the adjusted logits for one ``(M, D, H, W)`` volume."""
    model.eval()
    dtype = next(model.parameters()).dtype
    image = torch.as_tensor(np.asarray(volume)).to(dtype).unsqueeze(0)
    adjusted, _, _ = model(image)
    probs = torch.softmax(adjusted.logits, dim=1)
    return probs.argmax(dim=1)[0].numpy().astype(np.uint8)


def evaluate_predictions(predictions: dict[str, np.ndarray], dataset: Sequence) -> tuple[list[MetricReport], dict]:
    reports = [evaluate_regions(predictions[rec.sample_id], rec.mask, sample_id=rec.sample_id) for rec in dataset]
    return reports, aggregate(reports)


def evaluate(checkpoint, dataset: Sequence) -> tuple[list[MetricReport], dict]:
    if isinstance(checkpoint, FANCLModel):
        model = checkpoint
    else:
        state, cfg, model = load_checkpoint(checkpoint)
        for rec in dataset:
            if list(rec.mask.shape) != list(state["dims"]) or rec.volume.shape[0] != cfg.backbone.in_modalities:
                raise ValueError(
                    f"sample {rec.sample_id} dims {rec.volume.shape} incompatible with checkpoint "
                    f"(config {state['config_hash']}, dims {state['dims']})"
                )
    preds = {rec.sample_id: predict(model, rec.volume) for rec in dataset}
    return evaluate_predictions(preds, dataset)


def infer(checkpoint, volume) -> np.ndarray:
    _, _, model = load_checkpoint(checkpoint)
    return predict(model, volume)


def config_replace(cfg: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(cfg, **changes)
