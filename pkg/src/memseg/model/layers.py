"""Attention and transformer building blocks (unbatched ``(tokens, dim)`` tensors)."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def sinusoidal_1d(pos: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """``[sin(pos*w_k), cos(pos*w_k)]`` pairs with ``w_k = base^(-2k/dim)``."""
    half = dim // 2
    k = torch.arange(half, dtype=pos.dtype, device=pos.device)
    w = base ** (-2.0 * k / dim)
    ang = pos[..., None] * w
    return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(*pos.shape, 2 * half)


def sinusoidal_2d(rows: torch.Tensor, cols: torch.Tensor, dim: int) -> torch.Tensor:
    """Row encoding in the first half of the channels, column in the second."""
    return torch.cat([sinusoidal_1d(rows, dim // 2), sinusoidal_1d(cols, dim // 2)], dim=-1)


def grid_encoding(grid: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Positional encoding of a ``grid x grid`` token layout, row-major ``(grid*grid, dim)``."""
    r, c = torch.meshgrid(torch.arange(grid, dtype=dtype), torch.arange(grid, dtype=dtype), indexing="ij")
    return sinusoidal_2d(r.reshape(-1), c.reshape(-1), dim)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, key_mask=None, return_weights: bool = False):
    """Scaled dot-product attention over the last two dims; softmax over keys.

    ``key_mask`` is a boolean tensor broadcastable to ``(..., 1, S_k)``; False
    keys get zero weight.
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[..., None, :], float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., S, D) -> (..., H, S, Dh)
        return x.reshape(*x.shape[:-1], self.heads, self.head_dim).transpose(-3, -2)

    def forward(self, queries, keys, values, key_mask=None, return_weights: bool = False):
        q = self._split(self.q_proj(queries))
        k = self._split(self.k_proj(keys))
        v = self._split(self.v_proj(values))
        if key_mask is not None:
            key_mask = key_mask.unsqueeze(-2)  # broadcast over heads
        out, w = attention(q, k, v, key_mask, return_weights=True)
        out = out.transpose(-3, -2).reshape(*queries.shape[:-1], -1)
        out = self.out_proj(out)
        return (out, w) if return_weights else out


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.mlp(self.norm2(x))


class TwoWayBlock(nn.Module):
    """Prompt tokens attend to image tokens and back.

    The prompt stream is permutation-equivariant and the image stream is
    permutation-invariant in the prompt tokens.
    """

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 2):
        super().__init__()
        self.self_attn = MultiHeadAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.p2i = MultiHeadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio)
        self.norm3 = nn.LayerNorm(dim)
        self.i2p = MultiHeadAttention(dim, heads)
        self.norm4 = nn.LayerNorm(dim)

    def forward(self, prompts, tokens, prompt_mask=None):
        prompts = self.norm1(prompts + self.self_attn(prompts, prompts, prompts, key_mask=prompt_mask))
        prompts = self.norm2(prompts + self.p2i(prompts, tokens, tokens))
        prompts = self.norm3(prompts + self.mlp(prompts))
        tokens = self.norm4(tokens + self.i2p(tokens, prompts, prompts, key_mask=prompt_mask))
        return prompts, tokens
