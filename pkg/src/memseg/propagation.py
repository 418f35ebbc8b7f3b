"""Whole-volume inference: click sessions on planned slices, memory propagation elsewhere."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from .errors import ConfigError, ConfigMismatch, DimensionError, EmptyStructure
from .metrics import dsc, iou
from .model.checkpoint import Checkpoint
from .model.memory import MemoryBank, MemoryEntry
from .model.network import MemSegModel, stack_prompts
from .prompts import ClickPrompt, simulate_session
from .volume_io import LabelMask, Volume, VolumeBundle


@dataclass(frozen=True)
class PropagationStrategy:
    kind: str  # "all" or "every"
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("all", "every"):
            raise ConfigError(f"strategy kind must be 'all' or 'every', got {self.kind!r}")
        if self.k < 1:
            raise ConfigError(f"strategy stride must be >= 1, got {self.k}")

    @classmethod
    def parse(cls, text: str) -> "PropagationStrategy":
        t = text.strip().lower()
        if t == "all":
            return cls("all")
        if t.startswith("every:"):
            try:
                return cls("every", int(t.split(":", 1)[1]))
            except ValueError:
                pass
        raise ConfigError(f"bad strategy {text!r}; use 'all' or 'every:K'")

    def __str__(self) -> str:
        return "all" if self.kind == "all" else f"every:{self.k}"


ALL = PropagationStrategy("all")


def normalize_image(data: np.ndarray) -> np.ndarray:
    """Per-volume z-score (constant volumes map to zeros)."""
    a = np.asarray(data, dtype=np.float64)
    sd = a.std()
    return ((a - a.mean()) / (sd if sd > 0 else 1.0)).astype(np.float32)


def _labels(mask) -> np.ndarray:
    return mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)


def plan_prompt_slices(rs_mask, class_id: int, strategy: PropagationStrategy) -> list[int]:
    present = np.flatnonzero((_labels(rs_mask) == class_id).any(axis=(1, 2)))
    if present.size == 0:
        raise EmptyStructure(f"class {class_id} does not occur in the prompt source")
    if strategy.kind == "all":
        return [int(z) for z in present]
    have = set(present.tolist())
    first, last = int(present[0]), int(present[-1])
    return [z for z in range(first, last + 1, strategy.k) if z in have]


@dataclass
class SegmentationResult:
    mask: LabelMask
    logits: dict[int, np.ndarray]  # class -> (Z, H, W) float32
    slice_max_logit: dict[int, np.ndarray]  # class -> (Z,)
    prompted_slices: dict[int, list[int]]
    clicks_used: dict[int, int]
    clicks: list[ClickPrompt] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def total_clicks(self) -> int:
        return sum(self.clicks_used.values())


def _click_seed(seed: int, class_id: int, z: int) -> int:
    return int(np.random.SeedSequence([seed, class_id, z]).generate_state(1)[0])


def _run_pass(model, tokens, pix, images, rs, classes, plans, n_clicks, order, seed):
    """One directional sweep for all classes; returns per-class logits and clicks."""
    cap = model.config.memory_capacity
    banks = {c: MemoryBank(cap) for c in classes}
    out = {c: np.zeros(images.shape, dtype=np.float32) for c in classes}
    clicks: list[ClickPrompt] = []
    no_prompt = [model.encode_prompts([], c) for c in classes]
    for z in order:
        tok_z = tokens[z].expand(len(classes), -1, -1)
        mem_tok = model.memory_attend(tok_z, [banks[c] for c in classes], z)
        logits = [None] * len(classes)
        free = [i for i, c in enumerate(classes) if z not in plans[c]]
        if free:
            p, pm = stack_prompts([no_prompt[i] for i in free])
            lg = model.decode_mask(mem_tok[free], p, pix[z].expand(len(free), -1, -1, -1), pm)
            for j, i in enumerate(free):
                logits[i] = lg[j]
        for i, c in enumerate(classes):
            if logits[i] is not None:
                continue
            last = {}

            def seg(_img, cl, i=i, c=c, last=last):
                lg = model.decode_mask(mem_tok[i], model.encode_prompts(cl, c), pix[z])
                last["lg"] = lg
                return (lg >= 0).numpy()

            cl, _ = simulate_session(
                seg,
                images[z],
                rs[z] == c,
                c,
                max_iters=n_clicks,
                rng_seed=0 if seed is None else _click_seed(seed, c, z),
                slice_index=z,
                deterministic=seed is None,
            )
            clicks.extend(cl)
            logits[i] = last["lg"]
        lg_all = torch.stack(logits)
        entries = model.memory_tokens(tokens[z].expand(len(classes), -1, -1), lg_all)
        for i, c in enumerate(classes):
            banks[c].push(MemoryEntry(entries[i], z, z in plans[c]))
            out[c][z] = lg_all[i].numpy()
    return out, clicks


def fuse_logits(logits: dict[int, np.ndarray], shape) -> np.ndarray:
    """Highest-logit class wins; background where every probability is below 0.5."""
    labels = np.zeros(shape, dtype=np.uint8)
    if not logits:
        return labels
    classes = sorted(logits)
    stack = np.stack([logits[c] for c in classes])
    best = stack.argmax(axis=0)
    fg = stack.max(axis=0) >= 0.0
    labels[fg] = np.asarray(classes, dtype=np.uint8)[best[fg]]
    return labels


@torch.no_grad()
def propagate(
    model: MemSegModel | Checkpoint,
    volume: Volume | np.ndarray,
    prompt_source: LabelMask | np.ndarray,
    strategy: PropagationStrategy = ALL,
    clicks_per_prompted_slice: int = 1,
    class_ids: Sequence[int] | None = None,
    seed: int | None = None,
    reverse: bool = False,
    normalize: bool = True,
) -> SegmentationResult:
    """Segment every class of ``prompt_source`` in ``volume``.

    Classes absent from the prompt source are skipped (no clicks, empty
    output). ``seed=None`` places first clicks deterministically at the
    deepest eligible pixel; otherwise they are drawn from a stream keyed on
    ``(seed, class, slice)``. ``reverse=True`` adds a descending sweep and keeps
    the larger logit per voxel.
    """
    t0 = time.perf_counter()
    if isinstance(model, Checkpoint):
        model = model.build_model()
    cfg = model.config
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    rs = _labels(prompt_source)
    if data.ndim != 3 or rs.shape != data.shape:
        raise DimensionError(f"volume {data.shape} and prompt source {rs.shape} must be equal 3D grids")
    if data.shape[1:] != (cfg.slice_size, cfg.slice_size):
        raise ConfigMismatch(f"model expects {cfg.slice_size}x{cfg.slice_size} slices, volume has {data.shape[1:]}")
    if clicks_per_prompted_slice < 1:
        raise ConfigError("clicks per prompted slice must be >= 1")
    if class_ids is None:
        class_ids = range(1, cfg.num_classes)
    class_ids = [int(c) for c in class_ids]
    if any(not 1 <= c < cfg.num_classes for c in class_ids):
        raise ConfigMismatch(f"class ids {class_ids} exceed the model's {cfg.num_classes - 1} structures")

    classes = [c for c in class_ids if (rs == c).any()]
    plans = {c: plan_prompt_slices(rs, c, strategy) for c in classes}
    img = normalize_image(data) if normalize else data.astype(np.float32)
    logits: dict[int, np.ndarray] = {}
    clicks: list[ClickPrompt] = []
    if classes:
        was_training = model.training
        model.eval()
        images = torch.from_numpy(img)
        tokens, pix = model.encode_image(images)
        plan_sets = {c: set(p) for c, p in plans.items()}
        z_all = list(range(data.shape[0]))
        logits, clicks = _run_pass(model, tokens, pix, img, rs, classes, plan_sets, clicks_per_prompted_slice, z_all, seed)
        if reverse:
            back, more = _run_pass(model, tokens, pix, img, rs, classes, plan_sets, clicks_per_prompted_slice, z_all[::-1], seed)
            logits = {c: np.maximum(logits[c], back[c]) for c in classes}
            clicks += more
        model.train(was_training)

    labels = fuse_logits(logits, data.shape)
    spacing = volume.spacing if isinstance(volume, Volume) else (1.0, 1.0, 1.0)
    origin = volume.origin if isinstance(volume, Volume) else (0.0, 0.0, 0.0)
    names = prompt_source.class_names if isinstance(prompt_source, LabelMask) else None
    mask = LabelMask(labels, spacing, origin, names) if names else LabelMask(labels, spacing, origin)
    used = {c: 0 for c in class_ids}
    for ck in clicks:
        used[ck.class_id] += 1
    return SegmentationResult(
        mask=mask,
        logits=logits,
        slice_max_logit={c: logits[c].reshape(len(labels), -1).max(axis=1) for c in logits},
        prompted_slices={c: plans.get(c, []) for c in class_ids},
        clicks_used=used,
        clicks=clicks,
        wall_time=time.perf_counter() - t0,
    )


def sweep_strategies(
    model: MemSegModel | Checkpoint,
    cases: Iterable[tuple[str, VolumeBundle]],
    strategies: Sequence[PropagationStrategy],
    click_budgets: Sequence[int] = (1,),
    seed: int | None = None,
) -> list[dict]:
    """Per (case, strategy, budget, class) DSC/IoU rows."""
    if isinstance(model, Checkpoint):
        model = model.build_model()
    rows = []
    for vid, bundle in cases:
        if bundle.mask is None:
            raise DimensionError(f"case {vid} has no reference mask")
        ref = bundle.mask.labels
        for st in strategies:
            for n in click_budgets:
                res = propagate(model, bundle.image, bundle.mask, st, n, seed=seed)
                for c in range(1, model.config.num_classes):
                    if not (ref == c).any():
                        continue
                    p, r = res.mask.labels == c, ref == c
                    rows.append(
                        {
                            "volume": vid,
                            "strategy": str(st),
                            "clicks": n,
                            "class": c,
                            "dsc": dsc(p, r),
                            "iou": iou(p, r),
                            "clicks_used": res.clicks_used[c],
                            "seconds": res.wall_time,
                        }
                    )
    return rows


def summarize_sweep(rows: Sequence[dict]) -> list[dict]:
    """Mean DSC/IoU per (strategy, clicks, class)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["strategy"], r["clicks"], r["class"]), []).append(r)
    out = []
    for (st, n, c), rs in groups.items():
        out.append(
            {
                "strategy": st,
                "clicks": n,
                "class": c,
                "dsc": float(np.mean([r["dsc"] for r in rs])),
                "iou": float(np.mean([r["iou"] for r in rs])),
                "clicks_used": float(np.mean([r["clicks_used"] for r in rs])),
                "n": len(rs),
            }
        )
    return out
