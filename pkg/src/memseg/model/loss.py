"""Weighted binary cross-entropy plus soft Dice."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

DICE_EPS = 1.0
MAX_FG_WEIGHT = 10.0


def seg_loss(
    logits: torch.Tensor,
    target: torch.Tensor,
    ce_weight: tuple[float, float] = (1.0, 1.0),
    eps: float = DICE_EPS,
    reduction: str = "mean",
) -> torch.Tensor:
    """``wBCE + (1 - softDice)`` over the last two dims.

    ``ce_weight = (w_background, w_foreground)``, scalars or 1D tensors
    matching the leading dim; the cross-entropy term is
    the weight-normalised mean over pixels. Leading dims are reduced with
    ``reduction`` (``mean``, ``sum`` or ``none``).
    """
    if logits.shape != target.shape:
        raise ValueError(f"logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    q = target.to(logits.dtype)
    wb = torch.as_tensor(ce_weight[0], dtype=logits.dtype)
    wf = torch.as_tensor(ce_weight[1], dtype=logits.dtype)
    if wb.dim():  # one weight pair per leading item
        wb, wf = wb[..., None, None], wf[..., None, None]
    w = wb + (wf - wb) * q
    bce = F.binary_cross_entropy_with_logits(logits, q, reduction="none")
    ce = (w * bce).sum(dim=(-2, -1)) / w.sum(dim=(-2, -1))
    p = torch.sigmoid(logits)
    dice = (2 * (p * q).sum(dim=(-2, -1)) + eps) / (p.sum(dim=(-2, -1)) + q.sum(dim=(-2, -1)) + eps)
    loss = ce + (1 - dice)
    if reduction == "mean":
        return loss.mean()
    if reduction == "sum":
        return loss.sum()
    return loss


def inverse_frequency_weights(label_volumes, num_classes: int, cap: float = MAX_FG_WEIGHT) -> dict[int, tuple[float, float]]:
    """Per-class ``(w_bg, w_fg)`` with ``w_fg = n_bg / n_fg`` clipped to ``[1, cap]``."""
    counts = np.zeros(num_classes, dtype=np.int64)
    total = 0
    for lab in label_volumes:
        counts += np.bincount(np.asarray(lab).ravel(), minlength=num_classes)[:num_classes]
        total += np.asarray(lab).size
    out = {}
    for c in range(1, num_classes):
        fg = counts[c]
        w = cap if fg == 0 else float(np.clip((total - fg) / fg, 1.0, cap))
        out[c] = (1.0, w)
    return out
