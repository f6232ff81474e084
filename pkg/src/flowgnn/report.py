"""CSV tables and standalone SVG charts for run comparisons.

Charts are emitted as plain SVG text with fixed canvas geometry and
six-significant-digit number formatting, so byte-identical inputs always
produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["Series", "line_chart", "grouped_bar_chart", "write_rows"]

WIDTH = 640.0
HEIGHT = 400.0
MARGIN_L = 62.0
MARGIN_R = 18.0
MARGIN_T = 34.0
MARGIN_B = 46.0

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    label: str
    xs: list[float]
    ys: list[float]


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def write_rows(path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


class _Svg:
    def __init__(self, title: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(WIDTH)}" height="{int(HEIGHT)}" '
            f'viewBox="0 0 {int(WIDTH)} {int(HEIGHT)}" font-family="Helvetica, Arial, sans-serif">',
            f'<rect width="{int(WIDTH)}" height="{int(HEIGHT)}" fill="white"/>',
            f'<text x="{_fmt(WIDTH / 2)}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        ]

    def add(self, fragment: str) -> None:
        self.parts.append(fragment)

    def text(self, x, y, s, size=11, anchor="middle", color="#333"):
        self.add(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" text-anchor="{anchor}" '
            f'font-size="{size}" fill="{color}">{s}</text>'
        )

    def line(self, x1, y1, x2, y2, color="#888", width=1.0):
        self.add(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{_fmt(width)}"/>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _axes(svg: _Svg, x_lo, x_hi, y_lo, y_hi, x_label, y_label):
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def to_px(x, y):
        fx = 0.0 if x_hi == x_lo else (x - x_lo) / (x_hi - x_lo)
        fy = 0.0 if y_hi == y_lo else (y - y_lo) / (y_hi - y_lo)
        return MARGIN_L + fx * plot_w, HEIGHT - MARGIN_B - fy * plot_h

    svg.line(MARGIN_L, HEIGHT - MARGIN_B, WIDTH - MARGIN_R, HEIGHT - MARGIN_B, "#333")
    svg.line(MARGIN_L, MARGIN_T, MARGIN_L, HEIGHT - MARGIN_B, "#333")
    for tx in _ticks(x_lo, x_hi):
        px, py = to_px(tx, y_lo)
        svg.line(px, py, px, py + 4, "#333")
        svg.text(px, py + 16, _fmt(tx), size=10)
    for ty in _ticks(y_lo, y_hi):
        px, py = to_px(x_lo, ty)
        svg.line(px - 4, py, px, py, "#333")
        svg.text(px - 8, py + 3, _fmt(ty), size=10, anchor="end")
    svg.text((MARGIN_L + WIDTH - MARGIN_R) / 2, HEIGHT - 10, x_label, size=12)
    svg.add(
        f'<text x="14" y="{_fmt(HEIGHT / 2)}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {_fmt(HEIGHT / 2)})">{y_label}</text>'
    )
    return to_px


def line_chart(path, series: list[Series], title: str, x_label: str, y_label: str) -> None:
    """Polyline chart, one line per series, with a small legend."""
    if not series or all(not s.xs for s in series):
        raise ConfigError("line_chart: no data to plot")
    xs = [x for s in series for x in s.xs]
    ys = [y for s in series for y in s.ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    svg = _Svg(title)
    to_px = _axes(svg, x_lo, x_hi, y_lo, y_hi, x_label, y_label)
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(
            f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(x, y) for x, y in zip(s.xs, s.ys))
        )
        svg.add(f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        lx = MARGIN_L + 12
        ly = MARGIN_T + 14 + 16 * i
        svg.line(lx, ly - 4, lx + 18, ly - 4, color, 2.0)
        svg.text(lx + 24, ly, s.label, size=11, anchor="start")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg.render())


def grouped_bar_chart(
    path,
    groups: list[tuple[str, list[tuple[str, float]]]],
    title: str,
    y_label: str,
) -> None:
    """Bars clustered per group; bar labels share one legend."""
    if not groups:
        raise ConfigError("grouped_bar_chart: no data to plot")
    labels = []
    for _, bars in groups:
        for name, _ in bars:
            if name not in labels:
                labels.append(name)
    values = [v for _, bars in groups for _, v in bars]
    y_lo = min(0.0, min(values))
    y_hi = max(values) if max(values) > 0 else 1.0
    svg = _Svg(title)
    to_px = _axes(svg, 0.0, 1.0, y_lo, y_hi, "", y_label)
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    group_w = plot_w / len(groups)
    bar_w = min(28.0, group_w / (len(labels) + 1))
    for gi, (group_label, bars) in enumerate(groups):
        base_x = MARGIN_L + gi * group_w + group_w / 2
        start = base_x - bar_w * len(bars) / 2
        for bi, (name, value) in enumerate(bars):
            color = PALETTE[labels.index(name) % len(PALETTE)]
            _, top = to_px(0.0, value)
            _, zero = to_px(0.0, max(0.0, y_lo))
            x = start + bi * bar_w
            height = abs(zero - top)
            y = min(top, zero)
            svg.add(
                f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(bar_w - 2)}" '
                f'height="{_fmt(height)}" fill="{color}"/>'
            )
        svg.text(base_x, HEIGHT - MARGIN_B + 16, group_label, size=11)
    for i, name in enumerate(labels):
        lx = MARGIN_L + 12
        ly = MARGIN_T + 14 + 16 * i
        svg.add(
            f'<rect x="{_fmt(lx)}" y="{_fmt(ly - 9)}" width="12" height="9" '
            f'fill="{PALETTE[i % len(PALETTE)]}"/>'
        )
        svg.text(lx + 18, ly, name, size=11, anchor="start")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg.render())
