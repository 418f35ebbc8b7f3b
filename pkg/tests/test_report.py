import re

import pytest

from memseg.errors import ConfigError, CorruptData
from memseg.metrics import SummaryRow, aggregate
from memseg.report import parse_summary_csv, ramp_color, ramp_position, render_report, summary_csv


def rows(values, metric="dsc"):
    return [SummaryRow("ds", f"m{i}", "femoral", metric, v, 0.01, 5) for i, v in enumerate(values)]


def cell_classes(html):
    return re.findall(r'<td class="(ramp-[a-z]+)"[^>]*>([^<]*)</td>', html)


def test_largest_green_smallest_red():
    html = render_report(rows([0.7, 0.9, 0.8, 0.6]), "html")
    got = {text: cls for cls, text in cell_classes(html)}
    assert got["0.900 (0.010)"] == "ramp-green"
    assert got["0.600 (0.010)"] == "ramp-red"


def test_lower_is_better_for_thickness_error():
    html = render_report(rows([0.1, 0.3], metric="aae_mm"), "html")
    got = {text: cls for cls, text in cell_classes(html)}
    assert got["0.100 (0.010)"] == "ramp-green"
    assert got["0.300 (0.010)"] == "ramp-red"


def test_single_value_neutral():
    html = render_report(rows([0.5]), "html")
    assert cell_classes(html) == [("ramp-neutral", "0.500 (0.010)")]
    assert ramp_color(0.5) == "#fdb672"


def test_ramp_endpoints_and_ties():
    assert ramp_color(0.0) == "#d73027"
    assert ramp_color(1.0) == "#1a9850"
    assert ramp_position([3.0, 1.0, 3.0]) == [0.75, 0.0, 0.75]
    assert ramp_position([1.0, 2.0], higher_is_better=False) == [1.0, 0.0]


def test_markers_and_footnote():
    r = rows([0.8, 0.7])
    r[1].marker = "‡"
    html = render_report(r, "html")
    assert "0.700 (0.010)‡" in html
    assert "p &lt; 0.05" in html and "1e-7" in html
    assert "All" in html


def test_csv_round_trip():
    recs = [{"dataset": "d", "model": "m", "class": c, "metric": "dsc", "value": v}
            for c, vs in (("a", (0.1, 0.2)), ("b", (0.3, 0.35, 1 / 3))) for v in vs]
    summary = aggregate(recs)
    text = render_report(summary, "csv")
    back = parse_summary_csv(text)
    assert [(r.dataset, r.model, r.cls, r.metric, r.mean, r.std, r.n) for r in back] == [
        (r.dataset, r.model, r.cls, r.metric, r.mean, r.std, r.n) for r in summary
    ]
    assert summary_csv(back) == text
    assert text.splitlines()[0] == "dataset,model,class,metric,mean,std,n"


def test_bad_csv_header():
    with pytest.raises(CorruptData):
        parse_summary_csv("a,b\n1,2\n")


def test_bad_format():
    with pytest.raises(ConfigError):
        render_report(rows([0.5]), "pdf")
