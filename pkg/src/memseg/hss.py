"""Hybrid shuffling: chunked slice sampling with per-epoch chunk shuffles.

Each volume is tiled into chunks of ``S`` consecutive slices (a short tail
chunk is kept). Every epoch the global chunk pool is permuted, while slices
inside a chunk stay in ascending order. ``S=1`` is plain per-slice shuffling.

The permutation uses a counter-based SplitMix64 stream keyed on
``(seed, epoch)`` and a Fisher-Yates shuffle with multiply-shift bounding,
so schedules replay identically on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DatasetError, EmptySchedule, InvalidChunkSize

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    z = x & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


class CounterRNG:
    """SplitMix64 evaluated at an explicit counter: ``draw(i)`` is pure."""

    def __init__(self, seed: int, stream: int = 0):
        self.key = _mix64((seed & _M64) ^ _mix64((stream * _GOLDEN) & _M64))

    def draw(self, counter: int) -> int:
        return _mix64((self.key + (counter + 1) * _GOLDEN) & _M64)

    def below(self, counter: int, bound: int) -> int:
        return (self.draw(counter) * bound) >> 64


@dataclass(frozen=True)
class Chunk:
    volume_id: str
    start_slice: int
    length: int

    @property
    def slices(self) -> range:
        return range(self.start_slice, self.start_slice + self.length)


@dataclass(frozen=True)
class EpochSchedule:
    epoch: int
    order: tuple[int, ...]
    seed: int


def make_chunks(volumes: Sequence[tuple[str, int]], chunk_size: int) -> list[Chunk]:
    if chunk_size < 1:
        raise InvalidChunkSize(f"chunk size must be >= 1, got {chunk_size}")
    chunks = []
    for vid, n in volumes:
        if n < 1:
            raise DatasetError(f"volume {vid} has no slices")
        for start in range(0, n, chunk_size):
            chunks.append(Chunk(str(vid), start, min(chunk_size, n - start)))
    return chunks


def epoch_schedule(chunks: Sequence[Chunk], epoch: int, seed: int) -> EpochSchedule:
    n = len(chunks)
    if n == 0:
        raise EmptySchedule("no chunks to schedule")
    rng = CounterRNG(seed, epoch)
    order = list(range(n))
    for step, i in enumerate(range(n - 1, 0, -1)):
        j = rng.below(step, i + 1)
        order[i], order[j] = order[j], order[i]
    return EpochSchedule(int(epoch), tuple(order), int(seed))


@dataclass
class Batch:
    images: np.ndarray  # (L, H, W)
    masks: np.ndarray | None  # (L, H, W) integer labels
    volume_id: str
    slices: tuple[int, ...]


def iterate_batches(
    chunks: Sequence[Chunk],
    schedule: EpochSchedule,
    loader: Callable[[str], tuple[np.ndarray, np.ndarray | None]],
) -> Iterator[Batch]:
    """Yield one batch per chunk in schedule order.

    ``loader(volume_id)`` returns ``(image, labels)`` arrays indexed
    ``(z, y, x)``; the most recent volume is cached.
    """
    if sorted(schedule.order) != list(range(len(chunks))):
        raise EmptySchedule("schedule does not match the chunk list")
    cached_id, cached = None, None
    for idx in schedule.order:
        chunk = chunks[idx]
        if chunk.volume_id != cached_id:
            try:
                cached = loader(chunk.volume_id)
            except Exception as exc:
                raise DatasetError(f"loading volume {chunk.volume_id!r} failed: {exc}") from exc
            cached_id = chunk.volume_id
        image, labels = cached
        sl = slice(chunk.start_slice, chunk.start_slice + chunk.length)
        yield Batch(
            np.asarray(image[sl]),
            None if labels is None else np.asarray(labels[sl]),
            chunk.volume_id,
            tuple(chunk.slices),
        )
