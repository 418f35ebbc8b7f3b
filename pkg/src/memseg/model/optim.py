"""Adam and the plateau learning-rate schedule with early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update applied in place; returns ``(params, state)``.

    A ``None`` gradient is treated as zero.
    """
    params = list(params)
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    c1 = 1 - beta1**state.step
    c2 = 1 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}")
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params, state


@dataclass
class PlateauSchedule:
    """Halve the rate after ``patience`` epochs without improvement, floor at
    ``lr_min``; signal a stop after ``early_stop`` epochs without a new best."""

    lr: float
    lr_min: float = 1e-6
    patience: int = 5
    early_stop: int = 10
    best: float = float("-inf")
    best_epoch: int = -1
    bad_epochs: int = 0
    since_best: int = 0
    epoch: int = -1

    def step(self, metric: float) -> dict:
        self.epoch += 1
        improved = metric > self.best
        halved = False
        if improved:
            self.best = metric
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            self.since_best = 0
        else:
            self.bad_epochs += 1
            self.since_best += 1
            if self.bad_epochs >= self.patience:
                new = max(self.lr / 2, self.lr_min)
                halved = new < self.lr
                self.lr = new
                self.bad_epochs = 0
        return {"improved": improved, "halved": halved, "stop": self.since_best >= self.early_stop, "lr": self.lr}
