"""CSV and self-contained HTML summary tables."""

from __future__ import annotations

import csv
import html
import io
from collections import defaultdict
from typing import Sequence

import numpy as np

from .errors import ConfigError, CorruptData
from .metrics import SummaryRow

CSV_FIELDS = ("dataset", "model", "class", "metric", "mean", "std", "n")

# red -> orange -> yellow -> green, evenly spaced along the ramp
RAMP_STOPS = ((0xD7, 0x30, 0x27), (0xFC, 0x8D, 0x59), (0xFE, 0xE0, 0x8B), (0x1A, 0x98, 0x50))
LOWER_IS_BETTER = ("aae", "error", "time", "seconds")


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.dataset, r.model, r.cls, r.metric, repr(float(r.mean)), repr(float(r.std)), r.n])
    return buf.getvalue()


def parse_summary_csv(text: str) -> list[SummaryRow]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise CorruptData(f"summary CSV header must be {','.join(CSV_FIELDS)}")
    return [
        SummaryRow(r["dataset"], r["model"], r["class"], r["metric"], float(r["mean"]), float(r["std"]), int(r["n"]))
        for r in reader
    ]


def ramp_position(values: Sequence[float], higher_is_better: bool = True) -> list[float]:
    """Rank-based position in [0, 1] (1 = best); ties share their mean rank;
    a single value (or all equal) sits at 0.5."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return []
    if v.size == 1 or np.all(v == v[0]):
        return [0.5] * v.size
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0
        i = j + 1
    t = ranks / (v.size - 1)
    return list(t if higher_is_better else 1.0 - t)


def ramp_color(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0)
    seg = min(int(t * 3), 2)
    f = t * 3 - seg
    a, b = RAMP_STOPS[seg], RAMP_STOPS[seg + 1]
    rgb = [round(a[k] + (b[k] - a[k]) * f) for k in range(3)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def ramp_class(t: float, single: bool = False) -> str:
    if single:
        return "ramp-neutral"
    if t >= 0.75:
        return "ramp-green"
    if t >= 0.5:
        return "ramp-yellow"
    if t >= 0.25:
        return "ramp-orange"
    return "ramp-red"


def _lower_better(metric: str) -> bool:
    m = metric.lower()
    return any(k in m for k in LOWER_IS_BETTER)


def _html_table(rows: Sequence[SummaryRow], dataset: str, metric: str) -> str:
    models = list(dict.fromkeys(r.model for r in rows))
    classes = list(dict.fromkeys(r.cls for r in rows if r.cls != "All"))
    if any(r.cls == "All" for r in rows):
        classes.append("All")
    cell = {(r.cls, r.model): r for r in rows}
    ordered = [cell[(c, m)] for c in classes for m in models if (c, m) in cell]
    pos = ramp_position([r.mean for r in ordered], not _lower_better(metric))
    single = len(ordered) == 1 or len({r.mean for r in ordered}) == 1
    style = {id(r): (ramp_color(t), ramp_class(t, single)) for r, t in zip(ordered, pos)}
    out = [
        f'<h2 style="font-size:1.05em;margin:1.2em 0 0.4em">{html.escape(dataset)} / {html.escape(metric)}</h2>',
        '<table style="border-collapse:collapse;font-family:sans-serif;font-size:0.9em">',
        "<tr>" + '<th style="border:1px solid #999;padding:4px 8px">Class</th>'
        + "".join(f'<th style="border:1px solid #999;padding:4px 8px">{html.escape(m)}</th>' for m in models)
        + "</tr>",
    ]
    for c in classes:
        tds = []
        for m in models:
            r = cell.get((c, m))
            if r is None:
                tds.append('<td style="border:1px solid #999;padding:4px 8px">n/a</td>')
                continue
            color, cls = style[id(r)]
            tds.append(
                f'<td class="{cls}" style="border:1px solid #999;padding:4px 8px;background:{color}">'
                f"{html.escape(r.formatted())}</td>"
            )
        out.append(f'<tr><th style="border:1px solid #999;padding:4px 8px;text-align:left">{html.escape(c)}</th>{"".join(tds)}</tr>')
    out.append("</table>")
    return "\n".join(out)


def render_report(summary: Sequence[SummaryRow], fmt: str = "csv", title: str = "Segmentation summary", notes: Sequence[str] = ()) -> str:
    """``csv``: one line per summary row, full precision. ``html``: one
    colour-ramped table per (dataset, metric), cells ``mean (std)`` at three
    decimals with significance markers."""
    if fmt == "csv":
        return summary_csv(summary)
    if fmt != "html":
        raise ConfigError(f"report format must be csv or html, got {fmt!r}")
    tables: dict[tuple[str, str], list[SummaryRow]] = defaultdict(list)
    for r in summary:
        tables[(r.dataset, r.metric)].append(r)
    body = [_html_table(rs, ds, metric) for (ds, metric), rs in tables.items()]
    foot = [
        "Cells show mean (std). Colour ramp per table by rank: green best, red worst.",
        '"All" is the unweighted mean of the per-class means.',
        "† p &lt; 0.05, ‡ p &lt; 1e-7 (two-sided Wilcoxon rank-sum against the reference arm).",
        *[html.escape(n) for n in notes],
    ]
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>"
        + html.escape(title)
        + "</title></head>\n<body style=\"font-family:sans-serif;margin:1.5em\">\n"
        + f"<h1 style=\"font-size:1.3em\">{html.escape(title)}</h1>\n"
        + "\n".join(body)
        + "\n"
        + "".join(f'<p style="font-size:0.8em;color:#444">{f}</p>\n' for f in foot)
        + "</body></html>\n"
    )
