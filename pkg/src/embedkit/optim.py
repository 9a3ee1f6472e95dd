"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor


@dataclass
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001


class AdamW:
    def __init__(self, params: dict[str, Tensor], cfg: AdamWConfig):
        self.cfg = cfg
        self.params = params
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in sorted(params.items())}
        self.v = {k: np.zeros_like(p.data) for k, p in sorted(params.items())}

    def step(self, lr: float | None = None):
        """One update; None gradients count as zero, non-finite gradients abort."""
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise ArithmeticError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.data -= lr * (update + cfg.weight_decay * p.data)

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def export_state(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name in sorted(self.m):
            arrays[f"opt.m.{name}"] = self.m[name].copy()
            arrays[f"opt.v.{name}"] = self.v[name].copy()
        return arrays

    def load_state(self, arrays: dict[str, np.ndarray], step_count: int):
        for name in self.m:
            self.m[name] = np.array(arrays[f"opt.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"opt.v.{name}"], dtype=np.float64)
        self.step_count = step_count


def warmup_lr(base_lr: float, step: int, total_steps: int, warmup_frac: float) -> float:
    """Linear warmup over warmup_frac of the budget, then constant."""
    warm = max(1, int(round(warmup_frac * total_steps)))
    if step < warm:
        return base_lr * (step + 1) / warm
    return base_lr
