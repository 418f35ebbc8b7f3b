from collections import Counter

import numpy as np
import pytest

from memseg.errors import DatasetError, EmptySchedule, InvalidChunkSize
from memseg.hss import Chunk, epoch_schedule, iterate_batches, make_chunks


def toy_loader(dims):
    def load(vid):
        n = dims[vid]
        z = np.arange(n, dtype=np.float64)[:, None, None] * np.ones((1, 2, 2))
        return z, z.astype(np.int64)

    return load


def test_two_full_chunks():
    assert make_chunks([("v", 16)], 8) == [Chunk("v", 0, 8), Chunk("v", 8, 8)]


def test_tail_chunk():
    assert [c.length for c in make_chunks([("v", 20)], 8)] == [8, 8, 4]


def test_s1_one_chunk_per_slice():
    chunks = make_chunks([("a", 5), ("b", 3)], 1)
    assert len(chunks) == 8 and all(c.length == 1 for c in chunks)


def test_invalid_chunk_size():
    with pytest.raises(InvalidChunkSize):
        make_chunks([("v", 4)], 0)


def test_single_chunk_schedule():
    chunks = make_chunks([("v", 4)], 8)
    assert all(epoch_schedule(chunks, e, 3).order == (0,) for e in range(5))


def test_schedule_replay_and_epoch_change():
    chunks = make_chunks([(f"v{i}", 10) for i in range(100)], 10)
    a = epoch_schedule(chunks, 0, 42)
    assert a == epoch_schedule(chunks, 0, 42)
    assert a.order != epoch_schedule(chunks, 1, 42).order
    assert sorted(a.order) == list(range(100))


def test_empty_schedule():
    with pytest.raises(EmptySchedule):
        epoch_schedule([], 0, 0)


def test_two_volumes_two_batches():
    dims = {"a": 8, "b": 8}
    chunks = make_chunks(list(dims.items()), 8)
    batches = list(iterate_batches(chunks, epoch_schedule(chunks, 0, 0), toy_loader(dims)))
    assert len(batches) == 2
    assert sorted(b.volume_id for b in batches) == ["a", "b"]
    for b in batches:
        assert b.slices == tuple(range(8))
        assert np.array_equal(b.images[:, 0, 0], np.arange(8))


@pytest.mark.parametrize("S", [1, 3, 8])
def test_coverage_and_order(rng, S):
    for trial in range(30):
        dims = {f"v{i}": int(rng.integers(1, 25)) for i in range(int(rng.integers(1, 6)))}
        chunks = make_chunks(list(dims.items()), S)
        sched = epoch_schedule(chunks, trial, 7)
        seen = Counter()
        for b in iterate_batches(chunks, sched, toy_loader(dims)):
            assert list(b.slices) == sorted(b.slices)
            assert np.all(np.diff(b.slices) == 1)
            assert np.array_equal(b.images[:, 0, 0], b.slices)
            assert len(b.slices) <= S
            seen.update((b.volume_id, z) for z in b.slices)
        assert seen == Counter((v, z) for v, n in dims.items() for z in range(n))


def test_baseline_is_per_slice_shuffle():
    dims = {"a": 12, "b": 12}
    chunks = make_chunks(list(dims.items()), 1)
    order = [(b.volume_id, b.slices[0]) for b in iterate_batches(chunks, epoch_schedule(chunks, 0, 1), toy_loader(dims))]
    assert sorted(order) == sorted((v, z) for v in dims for z in range(12))
    assert order != sorted(order)


def test_loader_failure_has_context():
    chunks = make_chunks([("bad", 2)], 2)

    def load(vid):
        raise OSError("disk gone")

    with pytest.raises(DatasetError, match="bad"):
        list(iterate_batches(chunks, epoch_schedule(chunks, 0, 0), load))
