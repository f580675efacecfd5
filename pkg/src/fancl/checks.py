"""Self-check suites behind ``fancl check`` and the acceptance tests.

Each suite returns a :class:`CheckResult`. Oracles here are deliberately naive
(per-voxel loops, all-pairs distances) and share no code with the functions
they verify beyond the public entry points.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from .curriculum import build_curriculum
from .fga import AttentionMatrix, FGAConfig, FGAHead, fga_adjust
from .metrics import HD95_EMPTY, dsc, hd95
from .partition import PartitionSpec, partition, unpartition


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn, *args, **kwargs) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn(*args, **kwargs)
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


# -- partition ---------------------------------------------------------------

def _partition_roundtrip(n: int, seed: int, max_dim: int, max_patch: int):
    rng = np.random.default_rng(seed)
    padded = failures = 0
    for i in range(n):
        d, h, w = (int(v) for v in rng.integers(1, max_dim + 1, size=3))
        a, b = (int(v) for v in rng.integers(1, max_patch + 1, size=2))
        if i % 2:  # force the non-padding path on every other draw
            h, w = max(1, h // a) * a, max(1, w // b) * b
        lead = tuple(int(v) for v in rng.integers(1, 4, size=int(rng.integers(0, 3))))
        x = torch.as_tensor(rng.normal(size=(*lead, d, h, w)))
        p = partition(x, a, b)
        padded += bool(p.spec.pad_h or p.spec.pad_w)
        y = unpartition(p, d)
        if y.shape != x.shape or not torch.equal(x, y):
            failures += 1
    return failures == 0, f"{n - failures}/{n} bit-exact ({padded} padded, {n - padded} unpadded)"


def partition_roundtrip(n: int = 1000, seed: int = 0, max_dim: int = 32, max_patch: int = 8) -> CheckResult:
    return _timed("partition round-trip", _partition_roundtrip, n, seed, max_dim, max_patch)


# -- gradient ----------------------------------------------------------------

def gradient_instance(seed: int = 0):
    """Tiny float64 model and batch: volume 2x8x16x16, 3 classes, 4x4 patches, depth 2."""
    from .backbone import BackboneConfig
    from .pipeline import FANCLModel, TrainConfig

    cfg = TrainConfig(
        dtype="float64",
        seed=seed,
        backbone=BackboneConfig(depth=2, base_channels=4, num_classes=3, in_modalities=2),
        fga=FGAConfig(patch_a=4, patch_b=4, normalize=True, zero_init_tconv=False),
    )
    model = FANCLModel.build(cfg)
    rng = np.random.default_rng(seed)
    image = torch.as_tensor(rng.normal(size=(1, 2, 8, 16, 16)))
    labels = torch.as_tensor(rng.integers(0, 3, size=(1, 8, 16, 16)))
    curriculum = labels * torch.as_tensor(rng.random((1, 8, 16, 16)) < 0.5)
    return cfg, model, image, labels, curriculum


def _fancl_gradients(seed: int, tol: float):
    from .gradcheck import check_gradients, max_rel_err
    from .pipeline import fancl_loss

    cfg, model, image, labels, cur = gradient_instance(seed)
    results = check_gradients(lambda: fancl_loss(model, image, labels, cur, cfg)[0], model, seed=seed)
    covered = {r.name for r in results}
    expected = {n for n, _ in model.named_parameters()}
    err = max_rel_err(results)
    worst = max(results, key=lambda r: r.rel_err)
    ok = err < tol and covered == expected
    return ok, f"max rel err {err:.2e} over {len(results)} probes of {len(covered)} tensors (worst {worst.name})"


def fancl_gradients(seed: int = 0, tol: float = 1e-4) -> CheckResult:
    return _timed("gradient fidelity", _fancl_gradients, seed, tol)


# -- curriculum --------------------------------------------------------------

def curriculum_oracle(outputs, gt) -> list[np.ndarray]:
    """Per-voxel reference: keep the label once any mining output up to t agrees on foreground."""
    stages = []
    for t in range(1, len(outputs) + 1):
        c = np.zeros_like(gt)
        for idx in np.ndindex(gt.shape):
            g = gt[idx]
            if g != 0 and any(outputs[s][idx] == g for s in range(t)):
                c[idx] = g
        stages.append(c)
    return stages


def _curriculum_algebra(n: int, seed: int, num_stages: int):
    rng = np.random.default_rng(seed)
    bad = []
    for i in range(n):
        shape = tuple(int(v) for v in rng.integers(1, 7, size=3))
        gt = rng.integers(0, 4, size=shape).astype(np.uint8)
        keep = rng.random()
        outs = [np.where(rng.random(shape) < keep, gt, rng.integers(0, 4, size=shape)).astype(np.uint8)
                for _ in range(num_stages)]
        cur = build_curriculum(outs, gt)
        ref = curriculum_oracle(outs, gt)
        ok = all(np.array_equal(c, r) for c, r in zip(cur.stages, ref))
        prev = np.zeros(shape, dtype=bool)
        for c in cur.stages:
            s = c != 0
            ok &= not np.any(prev & ~s)
            ok &= np.array_equal(c[s], gt[s])
            prev = s
        ok &= not np.any(prev & (gt == 0))
        full = build_curriculum([gt.copy() for _ in range(num_stages)], gt)
        ok &= all(np.array_equal(c, gt) for c in full.stages)
        empty = build_curriculum([np.zeros_like(gt) for _ in range(num_stages)], gt)
        ok &= not empty.stage(1).any()
        if not ok:
            bad.append(i)
    return not bad, f"{n - len(bad)}/{n} instances match the per-voxel oracle and both extremes"


def curriculum_algebra(n: int = 200, seed: int = 0, num_stages: int = 3) -> CheckResult:
    return _timed("curriculum algebra", _curriculum_algebra, n, seed, num_stages)


# -- metrics -----------------------------------------------------------------

def _boundary_naive(mask: np.ndarray) -> list[tuple[int, ...]]:
    pts = []
    for idx in zip(*np.nonzero(mask)):
        for axis in range(mask.ndim):
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                if not 0 <= nb[axis] < mask.shape[axis] or not mask[tuple(nb)]:
                    pts.append(tuple(int(v) for v in idx))
                    break
            else:
                continue
            break
    return pts


def hd95_oracle(pred, gt) -> float:
    pred, gt = np.asarray(pred, bool), np.asarray(gt, bool)
    if not pred.any() and not gt.any():
        return 0.0
    if not pred.any() or not gt.any():
        return HD95_EMPTY
    x = np.array(_boundary_naive(pred), float)
    y = np.array(_boundary_naive(gt), float)
    d = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
    return float(max(np.percentile(d.min(axis=1), 95), np.percentile(d.min(axis=0), 95)))


def dsc_oracle(pred, gt) -> float:
    pred, gt = np.asarray(pred, bool).ravel(), np.asarray(gt, bool).ravel()
    inter = sum(1 for p, g in zip(pred, gt) if p and g)
    size = sum(1 for p in pred if p) + sum(1 for g in gt if g)
    return 1.0 if size == 0 else 2.0 * inter / size


def _blob_mask(rng, shape) -> np.ndarray:
    kind = rng.integers(0, 3)
    if kind == 0:
        return rng.random(shape) < rng.uniform(0.05, 0.6)
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    center = [rng.uniform(0, s) for s in shape]
    radii = [rng.uniform(1, max(1.5, s / 2)) for s in shape]
    blob = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii)) <= 1.0
    if kind == 2:
        blob ^= rng.random(shape) < 0.05
    return blob


def _metrics_oracle(n: int, seed: int, max_side: int, tol: float):
    rng = np.random.default_rng(seed)
    worst_hd = 0.0
    dsc_bad = 0
    for _ in range(n):
        shape = tuple(int(v) for v in rng.integers(2, max_side + 1, size=3))
        p, g = _blob_mask(rng, shape), _blob_mask(rng, shape)
        worst_hd = max(worst_hd, abs(hd95(p, g) - hd95_oracle(p, g)))
        dsc_bad += dsc(p, g) != dsc_oracle(p, g)
    z = np.zeros((5, 6, 7), bool)
    one = z.copy()
    one[2, 3, 4] = True
    edges = hd95(z, z) == 0.0 and hd95(one, z) == HD95_EMPTY and hd95(z, one) == HD95_EMPTY
    ok = worst_hd <= tol and dsc_bad == 0 and edges
    return ok, (f"max |hd95 - brute force| {worst_hd:.1e} over {n} pairs, "
                f"{dsc_bad} dsc mismatches, edge cases {'ok' if edges else 'wrong'}")


def metrics_oracle(n: int = 100, seed: int = 0, max_side: int = 16, tol: float = 1e-9) -> CheckResult:
    return _timed("metrics oracle", _metrics_oracle, n, seed, max_side, tol)


# -- zero attention ----------------------------------------------------------

def _zero_attention(n: int, seed: int):
    rng = np.random.default_rng(seed)
    bad = 0
    for i in range(n):
        pc = int(rng.integers(1, 5))
        d, h, w = (int(v) for v in rng.integers(1, 17, size=3))
        a, b = (int(v) for v in rng.integers(1, 9, size=2))
        torch.manual_seed(seed * 7919 + i)
        head = FGAHead(2, 4, pc, FGAConfig(patch_a=a, patch_b=b, zero_init_tconv=False))
        torch.nn.init.zeros_(head.tconv.bias)
        dtype = torch.float64 if i % 2 else torch.float32
        head = head.to(dtype)
        logits = torch.as_tensor(rng.normal(size=(1, pc, d, h, w))).to(dtype)
        img = PartitionSpec.for_shape(h, w, a, b)
        fga = AttentionMatrix(torch.zeros(1, pc, img.num_patches, img.num_patches, dtype=dtype), img, img, d)
        with torch.no_grad():
            out = fga_adjust(head, logits, fga)
        bad += not torch.equal(out.logits, logits)
    return bad == 0, f"{n - bad}/{n} adjusted logits bit-identical to the baseline"


def zero_attention_identity(n: int = 50, seed: int = 0) -> CheckResult:
    return _timed("zero-attention identity", _zero_attention, n, seed)


def run_all(quick: bool = False, seed: int = 0) -> list[CheckResult]:
    scale = 0.1 if quick else 1.0
    return [
        partition_roundtrip(n=max(10, int(1000 * scale)), seed=seed),
        fancl_gradients(seed=seed),
        curriculum_algebra(n=max(10, int(200 * scale)), seed=seed),
        metrics_oracle(n=max(10, int(100 * scale)), seed=seed),
        zero_attention_identity(n=max(5, int(50 * scale)), seed=seed),
    ]
