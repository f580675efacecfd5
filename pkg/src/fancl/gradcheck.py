"""Central finite-difference checks of autograd gradients (float64 only)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn


@dataclass
class GradCheckResult:
    name: str
    probe: str  # "direction" or "entry <flat index>"
    analytic: float
    numeric: float

    @property
    def rel_err(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), 1e-10)
        return abs(self.analytic - self.numeric) / denom


def check_gradients(
    loss_fn: Callable[[], torch.Tensor],
    module: nn.Module,
    *,
    eps: float = 1e-6,
    entries_per_param: int = 2,
    seed: int = 0,
) -> list[GradCheckResult]:
    """Compare autograd against central differences for every parameter tensor.

    Each tensor is probed along one random unit direction and at
    ``entries_per_param`` single entries (the largest-gradient entry first, then
    random ones).
    """
    params = dict(module.named_parameters())
    if any(p.dtype != torch.float64 for p in params.values()):
        raise TypeError("gradient checks need float64 parameters")
    module.zero_grad(set_to_none=True)
    loss_fn().backward()
    grads = {n: p.grad.detach().clone() for n, p in params.items()}
    gen = torch.Generator().manual_seed(seed)
    results = []

    def numeric(p: torch.Tensor, direction: torch.Tensor) -> float:
        with torch.no_grad():
            p.add_(direction, alpha=eps)
            up = float(loss_fn())
            p.add_(direction, alpha=-2 * eps)
            down = float(loss_fn())
            p.add_(direction, alpha=eps)
        return (up - down) / (2 * eps)

    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            v = torch.randn(p.shape, generator=gen, dtype=p.dtype)
            v /= v.norm()
            results.append(GradCheckResult(name, "direction", float((g * v).sum()), numeric(p, v)))
            flat = g.reshape(-1)
            picks = [int(flat.abs().argmax())]
            while len(picks) < min(entries_per_param, flat.numel()):
                idx = int(torch.randint(flat.numel(), (1,), generator=gen))
                if idx not in picks:
                    picks.append(idx)
            for idx in picks:
                e = torch.zeros_like(flat)
                e[idx] = 1.0
                results.append(GradCheckResult(name, f"entry {idx}", float(flat[idx]), numeric(p, e.view_as(p))))
    return results


def max_rel_err(results: list[GradCheckResult]) -> float:
    return max(r.rel_err for r in results)
