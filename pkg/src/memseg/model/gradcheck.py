"""Finite-difference gradient verification in float64."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigError, GradCheckFailure
from ..prompts import ClickPrompt
from .layers import MultiHeadAttention
from .loss import seg_loss
from .memory import MemoryBank, MemoryEntry
from .network import MemSegModel, ModelConfig

H_REL = 1e-5


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get)


ZERO_TOL = 1e-8


def _rel_error(a: np.ndarray, n: np.ndarray, f0: float) -> float:
    # a gradient that is zero in exact arithmetic (e.g. key bias under softmax
    # shift invariance) has no relative scale; both sides at round-off level
    # counts as agreement
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale <= ZERO_TOL * max(1.0, abs(f0)):
        return 0.0
    return float(np.abs(a - n).max() / scale)


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor],
    tol: float = 1e-5,
    max_entries: int = 16,
    seed: int = 0,
    analytic: dict[str, torch.Tensor] | None = None,
) -> GradCheckReport:
    """Compare autograd (or supplied ``analytic``) gradients of the scalar
    ``fn()`` against central differences with step ``1e-5 * max(1, |x|)``.

    Up to ``max_entries`` entries per tensor are probed (all of them when the
    tensor is small). The error per tensor is ``max|a - n| / max(|a|, |n|)``
    over the probed entries; a tensor where both gradients are below
    ``1e-8 * max(1, |f|)`` counts as zero and passes.
    """
    names = list(params)
    with torch.no_grad():
        f0 = fn().item()
    if analytic is None:
        out = fn()
        grads = torch.autograd.grad(out, [params[n] for n in names], allow_unused=True)
        analytic = {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0)
    for name in names:
        p = params[name]
        flat = p.data.view(-1)
        size = flat.numel()
        idx = np.arange(size) if size <= max_entries else np.sort(rng.choice(size, max_entries, replace=False))
        a = analytic[name].detach().reshape(-1)[idx].cpu().numpy().astype(np.float64)
        num = np.empty(len(idx))
        with torch.no_grad():
            for j, i in enumerate(idx):
                orig = flat[i].item()
                h = H_REL * max(1.0, abs(orig))
                flat[i] = orig + h
                fp = fn().item()
                flat[i] = orig - h
                fm = fn().item()
                flat[i] = orig
                num[j] = (fp - fm) / (2 * h)
        err = _rel_error(a, num, f0)
        report.per_param[name] = err
        report.checked += len(idx)
        report.max_rel_error = max(report.max_rel_error, err)
    if report.max_rel_error >= tol:
        worst = report.worst()
        raise GradCheckFailure(f"gradient mismatch in {worst}: relative error {report.per_param[worst]:.3e} >= {tol:.1e}")
    return report


# ---------------------------------------------------------------------------
# Canned fixtures, one per differentiable block
# ---------------------------------------------------------------------------

SMALL = dict(slice_size=16, patch=4, embed_dim=16, heads=2, pixel_dim=4, max_offset=4, num_classes=3)


def _params(module: nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + n: p for n, p in module.named_parameters()}


def _leaf(g: torch.Generator, *shape) -> torch.Tensor:
    return torch.randn(*shape, generator=g, dtype=torch.float64).requires_grad_(True)


def _fixture(block: str, cfg: ModelConfig, seed: int):
    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    d, s = cfg.embed_dim, cfg.slice_size
    if block == "linear":
        lin = nn.Linear(7, 5).double()
        x = _leaf(g, 4, 7)
        r = torch.randn(4, 5, generator=g, dtype=torch.float64)
        return (lambda: (torch.tanh(lin(x)) * r).sum()), {**_params(lin), "input": x}
    if block == "attention":
        mha = MultiHeadAttention(d, cfg.heads).double()
        q, kv = _leaf(g, 5, d), _leaf(g, 7, d)
        r = torch.randn(5, d, generator=g, dtype=torch.float64)
        return (lambda: (mha(q, kv, kv) * r).sum()), {**_params(mha), "queries": q, "keys_values": kv}

    model = MemSegModel(cfg).double()
    img = torch.rand(s, s, generator=g, dtype=torch.float64)
    target = torch.rand(s, s, generator=g) > 0.6
    clicks = [ClickPrompt(0, 3, 5, "pos", 1), ClickPrompt(0, s - 2, 1, "neg", 1)]
    r_tok = torch.randn(cfg.tokens, d, generator=g, dtype=torch.float64)

    if block == "patch_embed":
        return (lambda: (model.patch_embed(img) * r_tok).sum()), _params(model.patch_proj, "patch_proj.")
    if block == "encoder":
        params = {k: v for k, v in _params(model).items() if k.startswith(("patch_proj", "encoder", "pixel_conv"))}

        def f():
            tok, pix = model.encode_image(img)
            return (tok * r_tok).sum() + pix.sin().sum()

        return f, params
    if block == "memory_attend":
        x = _leaf(g, cfg.tokens, d)
        e1, e2 = _leaf(g, cfg.tokens, d), _leaf(g, cfg.tokens, d)
        bank = MemoryBank(cfg.memory_capacity)
        bank.push(MemoryEntry(e1, 0, True))
        bank.push(MemoryEntry(e2, 2, False))
        params = {k: v for k, v in _params(model).items() if k.startswith(("memory_", "offset_embed"))}
        params.update({"tokens": x, "entry0": e1, "entry1": e2})
        return (lambda: (model.memory_attend(x, bank, 3) * r_tok).sum()), params
    if block == "encode_memory":
        x = _leaf(g, cfg.tokens, d)
        logits = _leaf(g, s, s)
        params = {**_params(model.mask_proj, "mask_proj."), **_params(model.entry_norm, "entry_norm."), "tokens": x, "logits": logits}
        return (lambda: (model.encode_memory(x, logits, 0, False).tokens * r_tok).sum()), params
    if block == "prompt_encoder":
        params = {"polarity_embed": model.polarity_embed, "class_embed": model.class_embed, "no_prompt": model.no_prompt}
        r = torch.randn(len(clicks), d, generator=g, dtype=torch.float64)
        return (lambda: (model.encode_prompts(clicks, 1) * r).sum() + model.encode_prompts([], 2).sin().sum()), params
    if block == "decoder":
        x = _leaf(g, cfg.tokens, d)
        pix = _leaf(g, cfg.pixel_dim, s, s)
        prm = _leaf(g, 3, d)
        params = {k: v for k, v in _params(model).items() if k.startswith(("decoder", "head", "out_bias"))}
        params.update({"tokens": x, "prompts": prm, "pixel_features": pix})
        return (lambda: seg_loss(model.decode_mask(x, prm, pix), target, (1.0, 3.0))), params
    if block == "loss":
        logits = _leaf(g, s, s)
        return (lambda: seg_loss(logits, target, (1.0, 2.5))), {"logits": logits}
    if block == "model":
        img0 = torch.rand(s, s, generator=g, dtype=torch.float64)

        def f():
            bank = MemoryBank(cfg.memory_capacity)
            tok0, pix0 = model.encode_image(img0)
            l0 = model.decode_mask(tok0, model.encode_prompts(clicks, 1), pix0)
            bank.push(model.encode_memory(tok0, l0, 0, True))
            tok, pix = model.encode_image(img)
            tok = model.memory_attend(tok, bank, 1)
            l1 = model.decode_mask(tok, model.encode_prompts([], 1), pix)
            return seg_loss(l0, target, (1.0, 2.0)) + seg_loss(l1, target, (1.0, 2.0))

        return f, _params(model)
    raise ConfigError(f"unknown grad-check block {block!r}; choose from {', '.join(BLOCKS)}")


BLOCKS = (
    "linear",
    "attention",
    "patch_embed",
    "encoder",
    "prompt_encoder",
    "memory_attend",
    "encode_memory",
    "decoder",
    "loss",
    "model",
)


def grad_check_block(block: str, shapes: dict | None = None, tol: float = 1e-5, max_entries: int = 16, seed: int = 0) -> GradCheckReport:
    """Run :func:`grad_check` on a named block built at small float64 shapes."""
    cfg = ModelConfig(**{**SMALL, **(shapes or {})})
    fn, params = _fixture(block, cfg, seed)
    return grad_check(fn, params, tol=tol, max_entries=max_entries, seed=seed)
