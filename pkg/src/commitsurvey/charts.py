"""Self-contained static SVG charts (line, pie, bar, heatmap).

Output is byte-deterministic for a given input: coordinates are formatted
with fixed precision and colours come from a fixed palette.
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

from .analysis import FeatureComponentMatrix, RankedCount, TimelineSeries

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39",
           "#7b4173", "#3182bd", "#e6550d", "#31a354"]

WIDTH, HEIGHT = 960, 540
FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _f(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _attr(s: str) -> str:
    return escape(s, {'"': "&quot;"})


def _open(title: str, width: int = WIDTH, height: int = HEIGHT) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{width / 2:g}" y="28" text-anchor="middle" font-size="18" {FONT}>'
        f"{escape(title)}</text>",
    ]


def _legend(labels: Sequence[str], x: float, y: float) -> list[str]:
    out = ['<g class="legend">']
    for i, label in enumerate(labels):
        yy = y + i * 18
        out.append(f'<rect x="{_f(x)}" y="{_f(yy - 10)}" width="12" height="12" '
                   f'fill="{PALETTE[i % len(PALETTE)]}"/>')
        out.append(f'<text x="{_f(x + 18)}" y="{_f(yy)}" font-size="11" {FONT}>'
                   f"{escape(label)}</text>")
    out.append("</g>")
    return out


def _axes(x0: float, y0: float, x1: float, y1: float, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<line x1="{_f(x0)}" y1="{_f(y1)}" x2="{_f(x1)}" y2="{_f(y1)}" stroke="#000"/>',
        f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y1)}" stroke="#000"/>',
        f'<text class="x-label" x="{_f((x0 + x1) / 2)}" y="{_f(y1 + 40)}" '
        f'text-anchor="middle" font-size="12" {FONT}>{escape(xlabel)}</text>',
        f'<text class="y-label" x="{_f(x0 - 45)}" y="{_f((y0 + y1) / 2)}" '
        f'text-anchor="middle" font-size="12" {FONT} '
        f'transform="rotate(-90 {_f(x0 - 45)} {_f((y0 + y1) / 2)})">{escape(ylabel)}</text>',
    ]


def line_svg(series: Sequence[TimelineSeries], title: str, ylabel: str = "commits") -> str:
    if not series or not any(s.points for s in series):
        raise ValueError("line chart needs at least one non-empty series")
    x0, y0, x1, y1 = 80.0, 50.0, 660.0, 470.0
    months = sorted({m for s in series for m in s.months})
    pos = {m: i for i, m in enumerate(months)}
    ymax = max((v for s in series for v in s.values), default=0.0) or 1.0
    span = max(len(months) - 1, 1)

    def px(m: str) -> float:
        return x0 + (x1 - x0) * (pos[m] / span if len(months) > 1 else 0.5)

    def py(v: float) -> float:
        return y1 - (y1 - y0) * (v / ymax)

    out = _open(title) + _axes(x0, y0, x1, y1, "month", ylabel)
    for tick in range(5):
        v = ymax * tick / 4
        out.append(f'<text x="{_f(x0 - 6)}" y="{_f(py(v) + 4)}" text-anchor="end" '
                   f'font-size="10" {FONT}>{_f(v)}</text>')
    step = max(1, len(months) // 8)
    for i in range(0, len(months), step):
        m = months[i]
        out.append(f'<text x="{_f(px(m))}" y="{_f(y1 + 16)}" text-anchor="middle" '
                   f'font-size="10" {FONT}>{m}</text>')
    for i, s in enumerate(series):
        pts = " ".join(f"{_f(px(m))},{_f(py(v))}" for m, v in s.points)
        out.append(f'<polyline class="series" data-label="{_attr(s.label)}" points="{pts}" '
                   f'fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5"/>')
    out += _legend([s.label for s in series], x1 + 20, y0 + 10)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def pie_svg(slices: Sequence[tuple[str, int, float]], title: str) -> str:
    """``slices`` are (label, count, share) triples as returned by ``distribution``."""
    if not slices:
        raise ValueError("pie chart needs at least one slice")
    cx, cy, r = 300.0, 290.0, 200.0
    out = _open(title)
    total = sum(sh for _, _, sh in slices) or 1.0
    start = 0.0
    for i, (label, count, share) in enumerate(slices):
        sweep = 360.0 * share / total
        colour = PALETTE[i % len(PALETTE)]
        meta = (f'class="slice" data-label="{_attr(label)}" data-count="{count}" '
                f'data-sweep="{sweep:.6f}"')
        if sweep >= 360.0 - 1e-9:
            out.append(f'<circle {meta} cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" '
                       f'fill="{colour}"/>')
        else:
            a0, a1 = math.radians(start - 90), math.radians(start + sweep - 90)
            xs, ys = cx + r * math.cos(a0), cy + r * math.sin(a0)
            xe, ye = cx + r * math.cos(a1), cy + r * math.sin(a1)
            large = 1 if sweep > 180 else 0
            out.append(f'<path {meta} d="M {_f(cx)} {_f(cy)} L {_f(xs)} {_f(ys)} '
                       f'A {_f(r)} {_f(r)} 0 {large} 1 {_f(xe)} {_f(ye)} Z" fill="{colour}" '
                       'stroke="#fff"/>')
        start += sweep
    out += _legend([f"{label} ({count}, {share:.1%})" for label, count, share in slices],
                   560, 80)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_svg(ranking: Sequence[RankedCount], title: str, xlabel: str = "bug-fix commits") -> str:
    if not ranking:
        raise ValueError("bar chart needs at least one entry")
    x0, y0, x1 = 320.0, 50.0, 900.0
    bar_h = 22.0
    y1 = y0 + bar_h * len(ranking) + 10
    height = int(max(HEIGHT, y1 + 70))
    cmax = max(rc.count for rc in ranking) or 1
    out = _open(title, WIDTH, height) + _axes(x0, y0, x1, y1, xlabel, "")
    for i, rc in enumerate(ranking):
        y = y0 + 5 + i * bar_h
        w = (x1 - x0) * rc.count / cmax
        out.append(f'<rect class="bar" data-key="{_attr(rc.key)}" x="{_f(x0)}" y="{_f(y)}" '
                   f'width="{_f(w)}" height="{_f(bar_h - 4)}" fill="{PALETTE[0]}"/>')
        out.append(f'<text x="{_f(x0 - 6)}" y="{_f(y + bar_h / 2 + 2)}" text-anchor="end" '
                   f'font-size="11" {FONT}>{escape(rc.key)}</text>')
        out.append(f'<text x="{_f(x0 + w + 4)}" y="{_f(y + bar_h / 2 + 2)}" font-size="11" '
                   f'{FONT}>{rc.count} ({rc.share:.1%})</text>')
    out += _legend(["count"], x1 - 80, y0 - 15)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_svg(matrix: FeatureComponentMatrix, title: str) -> str:
    if not matrix.feature_keywords or not matrix.components:
        raise ValueError("heatmap needs a non-empty matrix")
    cell = 34.0
    x0, y0 = 180.0, 230.0
    width = int(max(WIDTH, x0 + cell * len(matrix.components) + 160))
    height = int(max(HEIGHT, y0 + cell * len(matrix.feature_keywords) + 60))
    vmax = max((v for row in matrix.cells for v in row), default=0) or 1
    out = _open(title, width, height)
    for j, comp in enumerate(matrix.components):
        x = x0 + j * cell + cell / 2
        out.append(f'<text class="x-label" x="{_f(x)}" y="{_f(y0 - 6)}" font-size="10" {FONT} '
                   f'transform="rotate(-60 {_f(x)} {_f(y0 - 6)})">{escape(comp)}</text>')
    for i, kw in enumerate(matrix.feature_keywords):
        y = y0 + i * cell
        out.append(f'<text class="y-label" x="{_f(x0 - 6)}" y="{_f(y + cell / 2 + 4)}" '
                   f'text-anchor="end" font-size="11" {FONT}>{escape(kw)}</text>')
        for j, v in enumerate(matrix.cells[i]):
            t = v / vmax
            shade = int(round(255 - 200 * t))
            fill = f"#{shade:02x}{shade:02x}ff"
            x = x0 + j * cell
            out.append(f'<rect class="cell" data-value="{v}" x="{_f(x)}" y="{_f(y)}" '
                       f'width="{_f(cell)}" height="{_f(cell)}" fill="{fill}" stroke="#fff"/>')
            out.append(f'<text x="{_f(x + cell / 2)}" y="{_f(y + cell / 2 + 4)}" '
                       f'text-anchor="middle" font-size="10" {FONT}>{v}</text>')
    lx = x0 + cell * len(matrix.components) + 20
    out.append(f'<g class="legend"><text x="{_f(lx)}" y="{_f(y0)}" font-size="11" {FONT}>'
               f"0 (light) to {vmax} (dark)</text></g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


_RENDERERS = {"line": line_svg, "pie": pie_svg, "bar": bar_svg, "heatmap": heatmap_svg}


def render_chart(data, kind: str, path=None, title: str = "") -> str:
    """Render ``data`` as an SVG of ``kind``; write it to ``path`` when given."""
    if kind not in _RENDERERS:
        raise ValueError(f"unknown chart kind {kind!r}")
    svg = _RENDERERS[kind](data, title or kind)
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    return svg
