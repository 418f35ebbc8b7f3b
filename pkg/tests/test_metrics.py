import itertools
import math

import numpy as np
import pytest

from memseg.errors import DimensionError
from memseg.metrics import aggregate, dsc, iou, midranks, significance_marker, wilcoxon_ranksum


def enumerate_p(a, b):
    """Exact two-sided p by listing every assignment of the pooled ranks to sample a."""
    pooled = list(a) + list(b)
    ranks = midranks(pooled)
    n1, n = len(a), len(pooled)
    mu = n1 * (n + 1) / 2.0
    obs = abs(ranks[:n1].sum() - mu)
    hits = total = 0
    for idx in itertools.combinations(range(n), n1):
        total += 1
        if abs(ranks[list(idx)].sum() - mu) >= obs - 1e-9:
            hits += 1
    return hits / total


def test_dsc_hand_cases():
    a = np.zeros((4, 4), bool)
    a[0] = True
    assert dsc(a, a) == 1.0
    assert dsc(a, np.roll(a, 2, axis=0)) == 0.0
    p = np.zeros(8, bool)
    r = np.zeros(8, bool)
    p[[0, 1, 2, 3]] = True
    r[[2, 3, 4, 5]] = True
    assert dsc(p, r) == 0.5
    assert iou(p, r) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_hand_cases():
    a = np.ones((3, 3), bool)
    assert iou(a, a) == 1.0
    p = np.zeros(6, bool)
    r = np.zeros(6, bool)
    p[:4] = True
    r[2:] = True
    assert iou(p, r) == pytest.approx(0.33333, abs=1e-5)


def test_empty_masks_score_one():
    z = np.zeros((2, 2), bool)
    assert dsc(z, z) == 1.0 and iou(z, z) == 1.0


def test_dim_mismatch():
    with pytest.raises(DimensionError):
        dsc(np.zeros(3), np.zeros(4))
    with pytest.raises(DimensionError):
        iou(np.zeros(3), np.zeros(4))


def test_iou_dsc_identity(rng):
    for _ in range(500):
        shape = tuple(rng.integers(1, 12, size=2))
        p, r = rng.random(shape) < rng.random(), rng.random(shape) < rng.random()
        d, j = dsc(p, r), iou(p, r)
        assert abs(j - d / (2 - d)) <= 1e-12
        assert j <= d


@pytest.mark.parametrize(
    "a, b, p",
    [([1, 2, 3], [4, 5, 6], 0.1), ([1, 4], [2, 3], 1.0), ([3, 1, 2], [2, 3, 1], 1.0)],
)
def test_wilcoxon_examples(a, b, p):
    assert wilcoxon_ranksum(a, b).p_value == pytest.approx(p, abs=1e-15)


def test_wilcoxon_all_identical():
    r = wilcoxon_ranksum([2.0, 2.0], [2.0, 2.0, 2.0])
    assert r.p_value == 1.0


def test_wilcoxon_matches_enumeration(rng):
    for _ in range(200):
        n1 = int(rng.integers(1, 8))
        n2 = int(rng.integers(1, 11 - n1))
        # small integer support forces ties
        a = rng.integers(0, 5, n1).tolist()
        b = rng.integers(0, 5, n2).tolist()
        got = wilcoxon_ranksum(a, b).p_value
        if len(set(a + b)) == 1:
            assert got == 1.0
        else:
            assert got == pytest.approx(enumerate_p(a, b), abs=1e-12)


def test_wilcoxon_statistic_is_rank_sum():
    r = wilcoxon_ranksum([10, 20], [15, 25, 30])
    assert r.statistic == 1 + 3
    assert (r.n1, r.n2, r.method) == (2, 3, "exact")


def test_wilcoxon_normal_approx_sane():
    a = list(range(20))
    b = [x + 100 for x in range(20)]
    r = wilcoxon_ranksum(a, b)
    assert r.method == "normal_approx"
    assert r.p_value < 1e-7
    same = wilcoxon_ranksum(a, a)
    assert same.p_value == pytest.approx(1.0)
    # symmetric under swapping samples
    assert wilcoxon_ranksum(b, a).p_value == pytest.approx(r.p_value)


def test_normal_approx_against_closed_form():
    a = [1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0]
    b = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0]
    n1, n2 = 7, 8
    w = sum(midranks(a + b)[:n1])
    mu = n1 * (n1 + n2 + 1) / 2
    sd = math.sqrt(n1 * n2 * (n1 + n2 + 1) / 12)
    z = (abs(w - mu) - 0.5) / sd
    expected = math.erfc(z / math.sqrt(2))
    assert wilcoxon_ranksum(a, b).p_value == pytest.approx(expected, rel=1e-12)


def test_midranks():
    assert midranks([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_markers():
    assert significance_marker(0.2) == ""
    assert significance_marker(0.049) == "†"
    assert significance_marker(1e-8) == "‡"
    assert significance_marker(0.05) == ""


def test_aggregate_single_and_pair():
    rows = aggregate([{"class": "femoral", "metric": "dsc", "value": 0.7}], add_all_row=False)
    assert (rows[0].mean, rows[0].std, rows[0].n) == (0.7, 0.0, 1)
    rows = aggregate([{"class": "c", "metric": "dsc", "value": v} for v in (0.7, 0.9)], add_all_row=False)
    assert rows[0].mean == pytest.approx(0.8, abs=1e-15)
    assert rows[0].std == pytest.approx(0.1, abs=1e-15)


def test_aggregate_all_row_is_mean_of_class_means():
    recs = [
        {"dataset": "d", "model": "m", "class": "a", "metric": "dsc", "value": v} for v in (0.2, 0.4, 0.6)
    ] + [{"dataset": "d", "model": "m", "class": "b", "metric": "dsc", "value": 1.0}]
    rows = {r.cls: r for r in aggregate(recs)}
    assert rows["All"].mean == pytest.approx((0.4 + 1.0) / 2)
    assert rows["All"].n == 2


def test_aggregate_empty_group_omitted(caplog):
    rows = aggregate([{"class": "x", "metric": "aae", "value": float("nan")}], add_all_row=False)
    assert rows == []
    assert "omitted" in caplog.text


def test_formatted_three_decimals():
    rows = aggregate([{"class": "c", "metric": "dsc", "value": v} for v in (0.81234, 0.80766)], add_all_row=False)
    assert rows[0].formatted() == "0.810 (0.002)"
