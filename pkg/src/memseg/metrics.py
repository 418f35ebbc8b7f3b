"""Overlap scores, the Wilcoxon rank-sum test and grouped summaries."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

log = logging.getLogger(__name__)

EXACT_MAX_N = 12


def _pair(p, r) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=bool)
    r = np.asarray(r, dtype=bool)
    if p.shape != r.shape:
        raise DimensionError(f"mask shapes differ: {p.shape} vs {r.shape}")
    return p, r


def dsc(pred, ref) -> float:
    """Dice similarity ``2|P∩R| / (|P|+|R|)``; two empty masks score 1.0."""
    p, r = _pair(pred, ref)
    inter = int(np.count_nonzero(p & r))
    total = int(np.count_nonzero(p)) + int(np.count_nonzero(r))
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def iou(pred, ref) -> float:
    """Intersection over union; two empty masks score 1.0."""
    p, r = _pair(pred, ref)
    inter = int(np.count_nonzero(p & r))
    union = int(np.count_nonzero(p | r))
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class OverlapScores:
    dsc: float
    iou: float
    class_id: int
    volume_id: str


def overlap_scores(pred_labels, ref_labels, class_ids: Iterable[int], volume_id: str) -> list[OverlapScores]:
    out = []
    for c in class_ids:
        p = np.asarray(pred_labels) == c
        r = np.asarray(ref_labels) == c
        out.append(OverlapScores(dsc(p, r), iou(p, r), int(c), str(volume_id)))
    return out


# --------------------------------------------------------------------------
# Wilcoxon rank-sum
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p_value: float
    method: str
    n1: int
    n2: int


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties replaced by the mean of their positions."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_p(doubled_ranks: np.ndarray, n1: int, w2_obs: int) -> float:
    """Two-sided exact p via the null distribution of the doubled rank sum.

    Counts ``n1``-subsets by rank sum with a dynamic programme; doubled
    midranks are integers, so ties are handled without rounding.
    """
    n = len(doubled_ranks)
    top = int(doubled_ranks.sum())
    # counts[k, s]: number of k-subsets of the ranks seen so far with sum s
    counts = np.zeros((n1 + 1, top + 1), dtype=np.int64)
    counts[0, 0] = 1
    for r in doubled_ranks.astype(int):
        for k in range(n1, 0, -1):
            counts[k, r:] += counts[k - 1, : top + 1 - r]
    dist = counts[n1]
    # |s - n1*top/n| scaled by n to stay in integers
    dev = np.abs(np.arange(top + 1) * n - n1 * top)
    dev_obs = abs(w2_obs * n - n1 * top)
    extreme = int(dist[dev >= dev_obs].sum())
    return min(1.0, extreme / int(dist.sum()))


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_ranksum(a: Sequence[float], b: Sequence[float]) -> StatResult:
    """Two-sided Wilcoxon rank-sum test of sample ``a`` against ``b``.

    The statistic is the rank sum of ``a`` under midranks. Exact enumeration is
    used when ``len(a) + len(b) <= 12``; otherwise a normal approximation with
    tie and continuity corrections.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    n1, n2 = len(a), len(b)
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples need at least one observation")
    n = n1 + n2
    ranks = midranks(a + b)
    w = float(ranks[:n1].sum())
    method = "exact" if n <= EXACT_MAX_N else "normal_approx"
    if len(set(a + b)) == 1:
        return StatResult(w, 1.0, method, n1, n2)

    if method == "exact":
        doubled = np.rint(ranks * 2).astype(np.int64)
        p = _exact_p(doubled, n1, int(doubled[:n1].sum()))
        return StatResult(w, p, method, n1, n2)

    mu = n1 * (n + 1) / 2.0
    _, tie_counts = np.unique(np.asarray(a + b), return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return StatResult(w, 1.0, method, n1, n2)
    z = max(abs(w - mu) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, 2.0 * _norm_sf(z))
    return StatResult(w, p, method, n1, n2)


def significance_marker(p: float) -> str:
    if p < 1e-7:
        return "‡"
    if p < 0.05:
        return "†"
    return ""


# --------------------------------------------------------------------------
# Grouped summaries
# --------------------------------------------------------------------------


@dataclass
class SummaryRow:
    dataset: str
    model: str
    cls: str
    metric: str
    mean: float
    std: float
    n: int
    marker: str = ""

    def formatted(self) -> str:
        return f"{self.mean:.3f} ({self.std:.3f}){self.marker}"


def aggregate(records: Iterable[dict], add_all_row: bool = True) -> list[SummaryRow]:
    """Mean and population std per (dataset, model, class, metric).

    ``records`` are flat dicts with keys dataset, model, class, metric, value.
    The "All" row of each (dataset, model, metric) is the unweighted mean of
    that group's per-class means, and its std is the std of those class
    means (class-weighted convention).
    """
    groups: dict[tuple, list[float]] = defaultdict(list)
    for rec in records:
        key = (str(rec.get("dataset", "")), str(rec.get("model", "")), str(rec["class"]), str(rec["metric"]))
        val = rec["value"]
        groups[key]  # register the group even if every value is missing
        if val is None or (isinstance(val, float) and math.isnan(val)):
            continue
        groups[key].append(float(val))
    rows: list[SummaryRow] = []
    for key in sorted(groups):
        vals = groups[key]
        if not vals:
            log.warning("empty group %s omitted", key)
            continue
        arr = np.asarray(vals)
        rows.append(SummaryRow(*key, float(arr.mean()), float(arr.std()), len(vals)))
    if add_all_row:
        by_metric: dict[tuple, list[SummaryRow]] = defaultdict(list)
        for r in rows:
            if r.cls != "All":
                by_metric[(r.dataset, r.model, r.metric)].append(r)
        for (ds, model, metric), rs in sorted(by_metric.items()):
            means = np.asarray([r.mean for r in rs])
            rows.append(SummaryRow(ds, model, "All", metric, float(means.mean()), float(means.std()), len(rs)))
    return rows
