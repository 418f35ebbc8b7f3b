"""Training loop: chunk-shuffled batches, simulated clicks, memory within chunks."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np
import torch

from .augment import AugmentConfig, augment
from .dataset import Corpus
from .errors import ConfigError, DatasetError, DivergenceError
from .hss import epoch_schedule, iterate_batches, make_chunks
from .metrics import dsc
from .model.checkpoint import Checkpoint
from .model.loss import inverse_frequency_weights, seg_loss
from .model.memory import MemoryBank, MemoryEntry
from .model.network import MemSegModel, ModelConfig, stack_prompts
from .model.optim import AdamState, PlateauSchedule, adam_step
from .prompts import first_click, simulate_session
from .propagation import PropagationStrategy, normalize_image, propagate

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_min: float = 1e-6
    plateau_epochs: int = 5
    early_stop: int = 10
    max_epochs: int = 100
    max_clicks: int = 8
    chunk_size: int = 8
    seed: int = 0
    p_prompt: float = 0.2
    val_strategy: str = "every:10"
    val_clicks: int = 1
    ce_weight: str = "auto"  # "auto" (inverse frequency) or "none"
    augment: AugmentConfig | None = None
    deterministic: bool = True
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig.from_dict(self.augment)
        if not 0 < self.lr_min <= self.lr0:
            raise ConfigError("train.lr0/lr_min: need 0 < lr_min <= lr0")
        for name in ("plateau_epochs", "early_stop", "max_epochs", "max_clicks", "chunk_size", "val_clicks", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name}: must be >= 1")
        if not 0.0 <= self.p_prompt <= 1.0:
            raise ConfigError("train.p_prompt: must lie in [0, 1]")
        if self.ce_weight not in ("auto", "none"):
            raise ConfigError("train.ce_weight: use 'auto' or 'none'")
        PropagationStrategy.parse(self.val_strategy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = None if self.augment is None else asdict(self.augment)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"train.{sorted(bad)[0]}: unknown option")
        return cls(**d)


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict] = field(default_factory=list)
    stopped_early: bool = False


def set_deterministic(threads: int = 1) -> None:
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


def validation_dsc(model: MemSegModel, bundles, strategy: PropagationStrategy, clicks: int = 1) -> float:
    """Mean over volumes of the mean DSC over classes present in the reference."""
    per_volume = []
    for b in bundles:
        ref = b.mask.labels
        res = propagate(model, b.image, b.mask, strategy, clicks)
        scores = [dsc(res.mask.labels == c, ref == c) for c in range(1, model.config.num_classes) if (ref == c).any()]
        if scores:
            per_volume.append(float(np.mean(scores)))
    if not per_volume:
        raise DatasetError("validation split has no labelled structures")
    return float(np.mean(per_volume))


class _ChunkTrainer:
    def __init__(self, model: MemSegModel, cfg: TrainConfig, weights: dict[int, tuple[float, float]]):
        self.model = model
        self.cfg = cfg
        self.classes = list(range(1, model.config.num_classes))
        self.w_bg = torch.tensor([weights[c][0] for c in self.classes])
        self.w_fg = torch.tensor([weights[c][1] for c in self.classes])

    def _session(self, mem_tok, pix, image, rs, c, z, seed):
        model = self.model

        def seg(_img, clicks):
            with torch.no_grad():
                return (model.decode_mask(mem_tok, model.encode_prompts(clicks, c), pix) >= 0).numpy()

        clicks, _ = simulate_session(seg, image, rs, c, self.cfg.max_clicks, seed, z)
        return clicks

    def chunk_loss(self, images: np.ndarray, labels: np.ndarray, slices, rng: np.random.Generator) -> torch.Tensor:
        model, classes = self.model, self.classes
        n = len(classes)
        tokens, pix = model.encode_image(torch.from_numpy(images))
        banks = [MemoryBank(model.config.memory_capacity) for _ in classes]
        seen = [False] * n
        total = tokens.new_zeros(())
        for j, z in enumerate(slices):
            tok_z = tokens[j].expand(n, -1, -1)
            mem = model.memory_attend(tok_z, banks, z)
            prompts, prompted = [], []
            for i, c in enumerate(classes):
                rs = labels[j] == c
                # draws happen unconditionally so the stream does not depend on content
                u, click_seed = rng.random(), int(rng.integers(2**31))
                clicks = []
                if rs.any():
                    if not seen[i]:
                        clicks = self._session(mem[i], pix[j], images[j], rs, c, z, click_seed)
                        seen[i] = True
                    elif u < self.cfg.p_prompt:
                        clicks = [first_click(rs, c, click_seed, z)]
                prompts.append(model.encode_prompts(clicks, c))
                prompted.append(bool(clicks))
            p, pm = stack_prompts(prompts)
            logits = model.decode_mask(mem, p, pix[j].expand(n, -1, -1, -1), pm)
            target = torch.from_numpy(np.stack([labels[j] == c for c in classes]))
            total = total + seg_loss(logits, target, (self.w_bg, self.w_fg), reduction="sum")
            entries = model.memory_tokens(tok_z, logits)
            for i in range(n):
                banks[i].push(MemoryEntry(entries[i], z, prompted[i]))
        return total / (len(slices) * n)


def _prepare(bundle) -> tuple[np.ndarray, np.ndarray]:
    if bundle.mask is None:
        raise DatasetError("training volume has no label mask")
    return normalize_image(bundle.image.data), bundle.mask.labels


def train(
    corpus: Corpus,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    on_epoch: Callable[[dict], None] | None = None,
    init: Checkpoint | None = None,
) -> TrainResult:
    mcfg = init.config if init is not None else (model_config or ModelConfig())
    cfg = train_config or TrainConfig()
    if not corpus.train_ids:
        raise DatasetError("training split is empty")
    if not corpus.val_ids:
        raise DatasetError("validation split is empty")
    if cfg.deterministic:
        set_deterministic(cfg.threads)
    else:
        torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)
    model = init.build_model() if init is not None else MemSegModel(mcfg)
    model.train()
    params = list(model.parameters())
    state = init.adam_state(model) if init is not None else AdamState()

    train_bundles = {vid: corpus.load(vid) for vid in corpus.train_ids}
    val_bundles = [corpus.load(vid) for vid in corpus.val_ids]
    for vid, b in train_bundles.items():
        if b.image.dims[1:] != (mcfg.slice_size, mcfg.slice_size):
            raise DatasetError(f"volume {vid} slices are {b.image.dims[1:]}, model expects {mcfg.slice_size}")
    if cfg.ce_weight == "auto":
        weights = inverse_frequency_weights([b.mask.labels for b in train_bundles.values()], mcfg.num_classes)
    else:
        weights = {c: (1.0, 1.0) for c in range(1, mcfg.num_classes)}

    prepared = {vid: _prepare(b) for vid, b in train_bundles.items()}
    chunks = make_chunks([(vid, b.image.dims[0]) for vid, b in train_bundles.items()], cfg.chunk_size)
    strategy = PropagationStrategy.parse(cfg.val_strategy)
    sched = PlateauSchedule(cfg.lr0, cfg.lr_min, cfg.plateau_epochs, cfg.early_stop)
    trainer = _ChunkTrainer(model, cfg, weights)
    meta = {"train_config": cfg.to_dict(), "ce_weight": {str(k): v for k, v in weights.items()}}

    start = 0
    if init is not None:
        start = init.epoch + 1
        if "schedule" in init.meta:
            sched = PlateauSchedule(**init.meta["schedule"])

    history: list[dict] = []
    best, last = init, None
    stopped = False
    ids = list(train_bundles)
    for epoch in range(start, cfg.max_epochs):
        t0 = time.perf_counter()
        if cfg.augment is not None:
            data = {
                vid: _prepare(augment(train_bundles[vid], cfg.augment, epoch * len(ids) + k)) for k, vid in enumerate(ids)
            }
        else:
            data = prepared
        schedule = epoch_schedule(chunks, epoch, cfg.seed)
        lr = sched.lr
        losses = []
        for b_idx, batch in enumerate(iterate_batches(chunks, schedule, data.__getitem__)):
            rng = np.random.default_rng([cfg.seed, epoch, b_idx])
            loss = trainer.chunk_loss(batch.images, batch.masks, batch.slices, rng)
            value = float(loss.detach())
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b_idx} (volume {batch.volume_id})")
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            adam_step(params, grads, state, lr)
            losses.append(value)
        model.eval()
        val = validation_dsc(model, val_bundles, strategy, cfg.val_clicks)
        model.train()
        status = sched.step(val)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "val_dsc": val,
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        log.info("epoch %d lr %.3g loss %.4f val DSC %.4f", epoch, lr, row["train_loss"], val)
        if on_epoch is not None:
            on_epoch(row)
        last = Checkpoint.from_model(model, state, epoch=epoch, best_dsc=sched.best, meta={**meta, "schedule": asdict(sched)})
        if status["improved"]:
            best = last
        if status["stop"]:
            stopped = True
            break
    if last is None:
        raise ConfigError(f"nothing to do: resume epoch {start} is already at max_epochs {cfg.max_epochs}")
    return TrainResult(best, last, history, stopped)


def history_csv(history: list[dict]) -> str:
    lines = ["epoch,lr,train_loss,val_dsc"]
    for r in history:
        lines.append(f"{r['epoch']},{r['lr']:.8g},{r['train_loss']:.6f},{r['val_dsc']:.6f}")
    return "\n".join(lines) + "\n"

