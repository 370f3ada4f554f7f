import math
import re
import xml.etree.ElementTree as ET

import pytest

from commitsurvey.analysis import FeatureComponentMatrix, RankedCount, TimelineSeries
from commitsurvey.charts import bar_svg, heatmap_svg, line_svg, pie_svg, render_chart

NS = "{http://www.w3.org/2000/svg}"
SLICES = [("Bug fix", 2, 0.5), ("New feature", 1, 0.25), ("Merge commit", 1, 0.25)]


def _root(svg):
    return ET.fromstring(svg.encode())


def test_pie_sweeps():
    slices = _root(pie_svg(SLICES, "t")).findall(f".//{NS}path")
    sweeps = [float(p.get("data-sweep")) for p in slices]
    assert sweeps == pytest.approx([180.0, 90.0, 90.0], abs=1e-6)


def test_pie_geometry_agrees_with_sweeps():
    for p in _root(pie_svg(SLICES, "t")).findall(f".//{NS}path"):
        nums = [float(x) for x in re.findall(r"-?\d+(?:\.\d+)?", p.get("d"))]
        cx, cy, xs, ys = nums[:4]
        xe, ye = nums[-2:]
        a0 = math.degrees(math.atan2(ys - cy, xs - cx))
        a1 = math.degrees(math.atan2(ye - cy, xe - cx))
        assert (a1 - a0) % 360 == pytest.approx(float(p.get("data-sweep")), abs=1e-2)


def test_pie_single_full_slice_is_circle():
    root = _root(pie_svg([("Bug fix", 4, 1.0)], "t"))
    assert root.find(f".//{NS}circle").get("data-sweep") == "360.000000"


def test_line_one_point():
    s = TimelineSeries("x", [("2020-01", 3.0)])
    [poly] = _root(line_svg([s], "t")).findall(f".//{NS}polyline")
    assert len(poly.get("points").split()) == 1


def test_charts_deterministic():
    s = [TimelineSeries("a", [("2020-01", 1.0), ("2020-02", 2.5)])]
    assert line_svg(s, "t") == line_svg(s, "t")
    assert pie_svg(SLICES, "t") == pie_svg(SLICES, "t")


def test_bar_and_heatmap_are_valid_svg():
    ranking = [RankedCount("kernel/bpf/verifier.c", 3, 0.6), RankedCount("a<b>&c", 2, 0.4)]
    root = _root(bar_svg(ranking, "t"))
    assert len(root.findall(f".//{NS}rect[@class='bar']")) == 2
    m = FeatureComponentMatrix(["bpf_link"], ["x", "y"], [[1, 0]])
    assert [r.get("data-value") for r in
            _root(heatmap_svg(m, "t")).findall(f".//{NS}rect[@class='cell']")] == ["1", "0"]


def test_render_chart_writes_file(tmp_path):
    path = tmp_path / "p.svg"
    svg = render_chart(SLICES, "pie", path, "Pie")
    assert path.read_text() == svg and "<title>Pie</title>" in svg


@pytest.mark.parametrize("kind, data", [("line", []), ("pie", []), ("bar", []),
                                        ("heatmap", FeatureComponentMatrix([], [], []))])
def test_empty_inputs_rejected(kind, data):
    with pytest.raises(ValueError):
        render_chart(data, kind)


def test_unknown_kind():
    with pytest.raises(ValueError):
        render_chart(SLICES, "radar")
