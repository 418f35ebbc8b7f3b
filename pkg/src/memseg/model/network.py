"""Toy promptable segmentation network with slice memory.

One forward pass segments one structure on one slice. The class to segment
is carried by the prompt tokens (every prompt token, including the no-prompt
token, has the class embedding added). Most methods accept either a single
item (``(T, D)`` tokens, ``(H, W)`` images) or a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ConfigMismatch, CoordinateError, DimensionError
from ..prompts import ClickPrompt
from .layers import EncoderBlock, MultiHeadAttention, TwoWayBlock, grid_encoding, sinusoidal_2d
from .memory import MemoryBank, MemoryEntry


@dataclass
class ModelConfig:
    slice_size: int = 64
    patch: int = 8
    embed_dim: int = 64
    heads: int = 4
    encoder_blocks: int = 2
    decoder_blocks: int = 1
    memory_capacity: int = 8
    num_classes: int = 5
    pixel_dim: int = 16
    max_offset: int = 16
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.slice_size < 1 or self.patch < 1 or self.slice_size % self.patch:
            raise ConfigError(f"model.slice_size {self.slice_size} must be a positive multiple of patch {self.patch}")
        if self.embed_dim < 4 or self.embed_dim % self.heads:
            raise ConfigError(f"model.embed_dim {self.embed_dim} must be divisible by heads {self.heads}")
        if self.embed_dim % 4:
            raise ConfigError("model.embed_dim must be a multiple of 4 for the 2D sinusoidal encoding")
        if self.memory_capacity < 1:
            raise ConfigError("model.memory_capacity must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("model.num_classes must include background and one structure")
        for name in ("encoder_blocks", "decoder_blocks", "pixel_dim", "max_offset", "mlp_ratio"):
            if getattr(self, name) < (0 if name.endswith("blocks") else 1):
                raise ConfigError(f"model.{name} out of range")

    @property
    def grid(self) -> int:
        return self.slice_size // self.patch

    @property
    def tokens(self) -> int:
        return self.grid**2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"model.{sorted(bad)[0]}: unknown option")
        return cls(**d)


class MemSegModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        d, c = cfg.embed_dim, cfg.pixel_dim

        self.patch_proj = nn.Linear(cfg.patch**2, d)
        self.register_buffer("pos_enc", grid_encoding(cfg.grid, d), persistent=False)
        self.encoder = nn.ModuleList(EncoderBlock(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.encoder_blocks))
        self.encoder_norm = nn.LayerNorm(d)
        self.pixel_conv1 = nn.Conv2d(1, c, 3, padding=1)
        self.pixel_conv2 = nn.Conv2d(c, c, 1)

        self.polarity_embed = nn.Parameter(torch.randn(2, d) * 0.5)
        self.class_embed = nn.Parameter(torch.randn(cfg.num_classes, d) * 0.5)
        self.no_prompt = nn.Parameter(torch.randn(d) * 0.5)

        self.offset_embed = nn.Parameter(torch.randn(2 * cfg.max_offset + 1, d) * 0.1)
        self.memory_attn = MultiHeadAttention(d, cfg.heads)
        self.memory_norm = nn.LayerNorm(d)
        self.mask_proj = nn.Linear(1, d)
        self.entry_norm = nn.LayerNorm(d)

        self.decoder = nn.ModuleList(TwoWayBlock(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.decoder_blocks))
        self.head = nn.Linear(d, c)
        self.out_bias = nn.Parameter(torch.zeros(()))

    # ------------------------------------------------------------------ image
    def _check_slice(self, image: torch.Tensor) -> None:
        s = self.config.slice_size
        if image.dim() < 2 or tuple(image.shape[-2:]) != (s, s):
            raise DimensionError(f"expected slices of {s}x{s}, got shape {tuple(image.shape)}")

    def patch_embed(self, image: torch.Tensor) -> torch.Tensor:
        self._check_slice(image)
        p, g = self.config.patch, self.config.grid
        lead = image.shape[:-2]
        x = image.reshape(*lead, g, p, g, p).transpose(-3, -2).reshape(*lead, g * g, p * p)
        return self.patch_proj(x) + self.pos_enc.to(x.dtype)

    def encode_image(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Image tokens ``(..., T, D)`` and full-resolution pixel features ``(..., C, H, W)``."""
        x = self.patch_embed(image)
        for blk in self.encoder:
            x = blk(x)
        x = self.encoder_norm(x)
        lead = image.shape[:-2]
        flat = image.reshape(-1, 1, *image.shape[-2:])
        pix = self.pixel_conv2(F.gelu(self.pixel_conv1(flat)))
        return x, pix.reshape(*lead, *pix.shape[1:])

    # ---------------------------------------------------------------- prompts
    def encode_prompts(self, clicks: Sequence[ClickPrompt], class_id: int) -> torch.Tensor:
        """``(n, D)`` prompt tokens; a single no-prompt token when ``clicks`` is empty."""
        cfg = self.config
        if not 1 <= class_id < cfg.num_classes:
            raise CoordinateError(f"class id {class_id} outside 1..{cfg.num_classes - 1}")
        cls = self.class_embed[class_id]
        if not clicks:
            return (self.no_prompt + cls)[None]
        for c in clicks:
            if not (0 <= c.row < cfg.slice_size and 0 <= c.col < cfg.slice_size):
                raise CoordinateError(f"click ({c.row}, {c.col}) outside {cfg.slice_size}x{cfg.slice_size} slice")
        dtype = self.class_embed.dtype
        # pixel centre expressed in token-grid units
        rows = (torch.tensor([c.row for c in clicks], dtype=dtype) + 0.5) / cfg.patch - 0.5
        cols = (torch.tensor([c.col for c in clicks], dtype=dtype) + 0.5) / cfg.patch - 0.5
        pol = torch.tensor([0 if c.positive else 1 for c in clicks])
        return sinusoidal_2d(rows, cols, cfg.embed_dim) + self.polarity_embed[pol] + cls

    # ----------------------------------------------------------------- memory
    def _bank_keys(self, bank: MemoryBank, slice_index: int) -> torch.Tensor:
        m = self.config.max_offset
        parts = []
        for e in bank:
            off = max(-m, min(m, slice_index - e.slice_index)) + m
            parts.append(e.tokens + self.offset_embed[off])
        return torch.cat(parts, dim=0)

    def memory_attend(self, tokens: torch.Tensor, bank, slice_index: int) -> torch.Tensor:
        """Cross-attend to bank entries; identity for an empty bank.

        ``tokens`` may be ``(T, D)`` with one bank or ``(B, T, D)`` with a list
        of ``B`` banks (which may differ in length).
        """
        if tokens.dim() == 2:
            if len(bank) == 0:
                return tokens
            mem = self._bank_keys(bank, slice_index)
            return self.memory_norm(tokens + self.memory_attn(tokens, mem, mem))
        banks = list(bank)
        if len(banks) != tokens.shape[0]:
            raise DimensionError(f"{len(banks)} banks for a batch of {tokens.shape[0]}")
        lengths = [len(b) for b in banks]
        if max(lengths) == 0:
            return tokens
        t = self.config.tokens
        n = max(lengths) * t
        mem = tokens.new_zeros(len(banks), n, tokens.shape[-1])
        valid = torch.zeros(len(banks), n, dtype=torch.bool)
        rows = []
        for i, b in enumerate(banks):
            if len(b):
                k = self._bank_keys(b, slice_index)
                rows.append(F.pad(k, (0, 0, 0, n - k.shape[0])))
                valid[i, : k.shape[0]] = True
            else:
                rows.append(mem[i])
                valid[i, 0] = True  # keeps softmax finite; result discarded below
        mem = torch.stack(rows)
        out = self.memory_norm(tokens + self.memory_attn(tokens, mem, mem, key_mask=valid))
        has = torch.tensor(lengths) > 0
        return torch.where(has[:, None, None], out, tokens)

    def memory_tokens(self, tokens: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
        """Fuse image tokens with a predicted mask (probabilities pooled to the token grid)."""
        p = self.config.patch
        prob = torch.sigmoid(logits)
        lead = prob.shape[:-2]
        pooled = F.avg_pool2d(prob.reshape(-1, 1, *prob.shape[-2:]), p)
        pooled = pooled.reshape(*lead, self.config.tokens, 1)
        return self.entry_norm(tokens + self.mask_proj(pooled))

    def encode_memory(self, tokens: torch.Tensor, logits: torch.Tensor, slice_index: int, prompted: bool) -> MemoryEntry:
        return MemoryEntry(self.memory_tokens(tokens, logits), int(slice_index), bool(prompted))

    # ---------------------------------------------------------------- decoder
    def decode_mask(
        self,
        tokens: torch.Tensor,
        prompts: torch.Tensor,
        pixel_features: torch.Tensor,
        prompt_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Logit map ``(..., H, W)`` for the structure named by the prompts.

        ``prompt_mask`` (``(B, P)`` bool) marks real prompt tokens when
        batching prompt sets of different sizes.
        """
        for blk in self.decoder:
            prompts, tokens = blk(prompts, tokens, prompt_mask)
        g, s = self.config.grid, self.config.slice_size
        h = self.head(tokens)  # (..., T, C)
        lead = h.shape[:-2]
        h = h.transpose(-2, -1).reshape(-1, h.shape[-1], g, g)
        h = F.interpolate(h, size=(s, s), mode="bilinear", align_corners=False)
        pix = pixel_features.reshape(-1, *pixel_features.shape[-3:])
        logits = (h * pix).sum(dim=1) + self.out_bias
        return logits.reshape(*lead, s, s)

    # ------------------------------------------------------------ convenience
    def segment(
        self,
        image: torch.Tensor,
        clicks: Sequence[ClickPrompt],
        class_id: int,
        bank: MemoryBank | None = None,
        slice_index: int = 0,
    ) -> torch.Tensor:
        tokens, pix = self.encode_image(image)
        if bank is not None:
            tokens = self.memory_attend(tokens, bank, slice_index)
        return self.decode_mask(tokens, self.encode_prompts(clicks, class_id), pix)

    def check_compatible(self, config: ModelConfig) -> None:
        if config != self.config:
            raise ConfigMismatch(f"checkpoint config {config} differs from model config {self.config}")


def stack_prompts(prompt_sets: Sequence[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a list of ``(n_i, D)`` prompt sets to ``(B, P, D)`` plus a validity mask."""
    p = max(t.shape[0] for t in prompt_sets)
    mask = torch.zeros(len(prompt_sets), p, dtype=torch.bool)
    out = []
    for i, t in enumerate(prompt_sets):
        mask[i, : t.shape[0]] = True
        out.append(F.pad(t, (0, 0, 0, p - t.shape[0])))
    return torch.stack(out), mask


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

