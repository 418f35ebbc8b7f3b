"""Bounded memory bank with prompted-entry retention."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class MemoryEntry:
    tokens: torch.Tensor  # (T, D)
    slice_index: int
    prompted: bool


class MemoryBank:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("memory capacity must be >= 1")
        self.capacity = int(capacity)
        self.entries: list[MemoryEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def push(self, entry: MemoryEntry) -> MemoryEntry | None:
        """Append ``entry``; return whatever had to be evicted."""
        self.entries.append(entry)
        if len(self.entries) <= self.capacity:
            return None
        victim = next((i for i, e in enumerate(self.entries) if not e.prompted), 0)
        return self.entries.pop(victim)

    def clear(self) -> None:
        self.entries.clear()


def bank_push(bank: MemoryBank, entry: MemoryEntry) -> MemoryBank:
    bank.push(entry)
    return bank
