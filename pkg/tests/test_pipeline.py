import csv

import numpy as np
import pytest
import torch

from fancl.backbone import BackboneConfig
from fancl.curriculum import StageSchedule, build_curriculum
from fancl.data import PhantomSpec, generate_dataset
from fancl.fga import FGAConfig
from fancl.metrics import HD95_EMPTY
from fancl.pipeline import (
    FANCLModel,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    evaluate_predictions,
    fancl_loss,
    infer,
    kfold_split,
    load_checkpoint,
    poly_lr,
    train,
)


def test_kfold_partition():
    folds = kfold_split(10, 5, seed=0)
    vals = [v for _, v in folds]
    assert all(len(v) == 2 for v in vals)
    assert sorted(sum(vals, [])) == list(range(10))
    for train_ids, val_ids in folds:
        assert not set(train_ids) & set(val_ids)
        assert sorted(train_ids + val_ids) == list(range(10))
    assert kfold_split(10, 5, seed=0) == folds


def test_kfold_uneven_sizes():
    assert sorted(len(v) for _, v in kfold_split(7, 5, seed=3)) == [1, 1, 1, 2, 2]


def test_kfold_rejects():
    with pytest.raises(ValueError):
        kfold_split(3, 5, 0)
    with pytest.raises(ValueError):
        kfold_split(10, 1, 0)


def test_poly_lr():
    assert poly_lr(0.01, 0, 500) == 0.01
    assert poly_lr(0.01, 250, 500, 0.9) == pytest.approx(0.01 * 0.5**0.9, abs=1e-12)
    assert poly_lr(0.01, 250, 500, 0.9) == pytest.approx(0.0053589, abs=1e-6)
    last = poly_lr(0.01, 499, 500)
    assert 0 < last < 0.01
    with pytest.raises(ValueError):
        poly_lr(0.01, 500, 500)


def test_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        TrainConfig(epochs_total=10)
    cfg = TrainConfig.full_scale()
    assert cfg.schedule.epochs_per_stage == (80, 80, 340) and cfg.epochs_total == 500
    assert cfg.momentum == 0.99 and cfg.poly_exponent == 0.9 and cfg.mining.epochs == 100 and cfg.mining.folds == 5
    again = TrainConfig.from_dict(cfg.to_dict())
    assert again.config_hash() == cfg.config_hash()


def small_config(**kw):
    base = dict(
        epochs_total=10,
        schedule=StageSchedule((2, 2, 6)),
        batch_size=2,
        backbone=BackboneConfig(depth=2, base_channels=4),
        fga=FGAConfig(normalize=True, img_hidden=8),
    )
    return TrainConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def toy():
    spec = PhantomSpec(dims=(8, 16, 16), lesion_radius_range=(1.5, 2.5), lesion_count_range=(1, 2))
    data = generate_dataset(spec, 4, seed=11)
    rng = np.random.default_rng(0)
    curricula = {
        r.sample_id: build_curriculum([np.where(rng.random(r.mask.shape) < p, r.mask, 0) for p in (0.3, 0.6, 0.9)], r.mask)
        for r in data
    }
    return data, curricula


@pytest.fixture(scope="module")
def full_run(toy, tmp_path_factory):
    data, curricula = toy
    out = tmp_path_factory.mktemp("run")
    return out, train(small_config(), data, curricula, out_dir=out)


def test_stage_transitions_and_hashes(full_run):
    _, result = full_run
    rows = result.rows
    assert len(rows) == 10 * 2
    by_epoch = {r["epoch"]: r for r in rows}
    stages = [by_epoch[e]["stage"] for e in range(10)]
    assert stages == [1, 1, 2, 2, 3, 3, 3, 3, 3, 3]
    changes = [e for e in range(1, 10) if by_epoch[e]["curriculum_hash"] != by_epoch[e - 1]["curriculum_hash"]]
    assert changes == [2, 4]


def test_lr_column_is_closed_form(full_run):
    _, result = full_run
    for r in result.rows:
        assert r["lr"] == poly_lr(0.01, r["epoch"], 10, 0.9)


def test_log_rows_sum(full_run):
    _, result = full_run
    for r in result.rows:
        assert abs(r["total"] - (r["l_cur"] + r["l_gt"] + r["l_fga"])) < 1e-9
        assert abs((r["dice"] + r["ce"]) - (r["l_cur"] + r["l_gt"])) < 1e-6


def test_log_and_checkpoints_written(full_run):
    out, result = full_run
    with open(out / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20 and list(rows[0]) == [
        "epoch", "step", "stage", "dice", "ce", "l_cur", "l_gt", "l_fga", "total", "lr", "curriculum_hash"]
    names = sorted(p.name for p in result.checkpoints)
    assert names == ["checkpoint_epoch0002.pt", "checkpoint_epoch0004.pt", "checkpoint_epoch0010.pt"]
    assert (out / "checkpoint_epoch0004.json").exists()


def test_resume_reproduces_log(toy, full_run, tmp_path):
    data, curricula = toy
    out, result = full_run
    resumed = train(small_config(), data, curricula, out_dir=tmp_path, resume_from=out / "checkpoint_epoch0004.pt")
    tail = [r for r in result.rows if r["epoch"] >= 4]
    assert resumed.rows == tail


def test_interrupted_then_resumed_matches(toy, full_run, tmp_path):
    data, curricula = toy
    _, result = full_run
    first = train(small_config(), data, curricula, out_dir=tmp_path / "a", stop_after_epoch=2)
    second = train(small_config(), data, curricula, out_dir=tmp_path / "b", resume_from=first.checkpoint)
    assert first.rows + second.rows == result.rows


def test_evaluate_deterministic_and_in_range(toy, full_run):
    data, _ = toy
    _, result = full_run
    ckpt = result.checkpoints[-1]
    reps1, agg1 = evaluate(ckpt, data)
    reps2, agg2 = evaluate(ckpt, data)
    assert agg1 == agg2
    for rep in reps1:
        for r in ("et", "tc", "wt"):
            assert 0 <= rep.dsc[r] <= 1 and 0 <= rep.hd95[r] <= HD95_EMPTY


def test_evaluate_gt_fixture(toy):
    data, _ = toy
    _, agg = evaluate_predictions({r.sample_id: r.mask for r in data}, data)
    assert agg["mean_dsc"] == 1.0 and agg["mean_hd95"] == 0.0


def test_evaluate_rejects_incompatible_dims(full_run):
    _, result = full_run
    other = generate_dataset(PhantomSpec(dims=(8, 16, 32), lesion_radius_range=(1.0, 2.0)), 1, seed=0)
    with pytest.raises(ValueError, match="incompatible"):
        evaluate(result.checkpoints[-1], other)


def test_infer_returns_label_mask(toy, full_run):
    data, _ = toy
    _, result = full_run
    mask = infer(result.checkpoints[-1], data[0].volume)
    assert mask.shape == data[0].mask.shape and mask.max() < 4


def test_checkpoint_restores_parameters(full_run):
    _, result = full_run
    state, cfg, model = load_checkpoint(result.checkpoints[-1])
    assert state["epoch"] == 10 and state["stage"] == 3
    for (n1, p1), (n2, p2) in zip(model.state_dict().items(), result.model.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)


def test_schedule_curriculum_mismatch_rejected(toy):
    data, curricula = toy
    cfg = small_config(epochs_total=4, schedule=StageSchedule((2, 2)))
    with pytest.raises(ValueError, match="stages"):
        train(cfg, data, curricula)


def test_divergence_reports_last_checkpoint(toy, tmp_path):
    data, curricula = toy
    bad = [type(r)(r.sample_id, np.full_like(r.volume, np.inf), r.mask, r.provenance) for r in data]
    with pytest.raises(TrainingDiverged) as exc:
        train(small_config(), bad, curricula, out_dir=tmp_path)
    assert exc.value.last_checkpoint is None


def test_divergence_after_resume_points_at_checkpoint(toy, full_run, tmp_path):
    data, curricula = toy
    out, _ = full_run
    bad = [type(r)(r.sample_id, np.full_like(r.volume, np.nan), r.mask, r.provenance) for r in data]
    ckpt = out / "checkpoint_epoch0004.pt"
    with pytest.raises(TrainingDiverged) as exc:
        train(small_config(), bad, curricula, out_dir=tmp_path, resume_from=ckpt)
    assert exc.value.last_checkpoint == ckpt


def test_every_parameter_gets_gradient(toy):
    data, curricula = toy
    cfg = small_config(fga=FGAConfig(normalize=True, img_hidden=8, zero_init_tconv=False))
    model = FANCLModel.build(cfg)
    image = torch.stack([torch.as_tensor(r.volume) for r in data[:2]])
    labels = torch.stack([torch.as_tensor(r.mask.astype(np.int64)) for r in data[:2]])
    cur = torch.stack([torch.as_tensor(curricula[r.sample_id].stage(1).astype(np.int64)) for r in data[:2]])
    total, _ = fancl_loss(model, image, labels, cur, cfg)
    total.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not p.grad.abs().sum() > 0]
    assert dead == []
