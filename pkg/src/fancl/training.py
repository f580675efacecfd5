"""Shared training primitives: fold splits, poly LR, SGD setup, plain fitting."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .core import one_hot
from .losses import LossConfig, dice_ce


def kfold_split(n_samples: int, k: int, seed: int) -> list[tuple[list[int], list[int]]]:
    """Seeded k-fold partition; validation folds are disjoint and differ in size by at most one."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if n_samples < k:
        raise ValueError(f"cannot split {n_samples} samples into {k} folds")
    order = np.random.default_rng(seed).permutation(n_samples)
    folds = np.array_split(order, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((sorted(int(t) for t in train), sorted(int(v) for v in val)))
    return out


def poly_lr(lr0: float, epoch: int, total: int, exponent: float = 0.9) -> float:
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    return lr0 * (1.0 - epoch / total) ** exponent


def make_optimizer(params: Iterable[nn.Parameter], lr0: float, momentum: float, weight_decay: float = 0.0):
    if not lr0 > 0:
        raise ValueError(f"lr0 must be positive, got {lr0}")
    if not 0 <= momentum < 1:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    return torch.optim.SGD(params, lr=lr0, momentum=momentum, nesterov=momentum > 0, weight_decay=weight_decay)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Shuffled minibatches; a pure function of (seed, epoch) so resumed runs replay the same order."""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [sorted(int(i) for i in order[s : s + batch_size]) for s in range(0, n, batch_size)]


def stack_batch(records: Sequence, ids: Sequence[int], dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    image = torch.stack([torch.as_tensor(records[i].volume) for i in ids]).to(dtype)
    labels = torch.stack([torch.as_tensor(records[i].mask.astype(np.int64)) for i in ids])
    return image, labels


def clip_gradients(params, max_norm: float | None) -> None:
    if max_norm:
        torch.nn.utils.clip_grad_norm_(list(params), max_norm)


def fit_backbone(
    net: nn.Module,
    records: Sequence,
    *,
    epochs: int,
    lr0: float,
    momentum: float,
    poly_exponent: float,
    batch_size: int,
    seed: int,
    loss_cfg: LossConfig | None = None,
    grad_clip: float | None = 12.0,
) -> list[float]:
    """Train a plain backbone with Dice + CE against the ground truth. Returns per-epoch mean loss."""
    dtype = next(net.parameters()).dtype
    opt = make_optimizer(net.parameters(), lr0, momentum)
    history = []
    net.train()
    for epoch in range(epochs):
        set_lr(opt, poly_lr(lr0, epoch, epochs, poly_exponent))
        losses = []
        for ids in epoch_batches(len(records), batch_size, seed, epoch):
            image, labels = stack_batch(records, ids, dtype)
            target = one_hot(labels, net.cfg.num_classes).to(dtype)
            probs = torch.softmax(net(image).logits, dim=1)
            dice, ce = dice_ce(probs, target, loss_cfg)
            loss = dice + ce
            opt.zero_grad(set_to_none=True)
            loss.backward()
            clip_gradients(net.parameters(), grad_clip)
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    return history


@torch.no_grad()
def predict_labels(net: nn.Module, volume) -> np.ndarray:
    dtype = next(net.parameters()).dtype
    net.eval()
    image = torch.as_tensor(volume).to(dtype).unsqueeze(0)
    logits = net(image).logits
    return logits.argmax(dim=1)[0].cpu().numpy().astype(np.uint8)
