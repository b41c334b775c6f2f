"""Tiny hand-rolled SVG line plots.

Deliberately not a plotting library: output bytes are a pure function of
the inputs, which keeps emitted artifacts reproducible across runs and
machines.
"""

from __future__ import annotations

import math

_WIDTH, _HEIGHT = 640, 420
_ML, _MR, _MT, _MB = 64, 16, 36, 48
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_plot(
    path,
    x_values,
    series: dict[str, list[float]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
):
    """Write a multi-series line plot; one polyline per series entry."""
    xs = [float(x) for x in x_values]
    if not xs or not series:
        raise ValueError("line_plot needs at least one point and one series")
    ys_all = [float(y) for ys in series.values() for y in ys if math.isfinite(y)]
    if not ys_all:
        raise ValueError("line_plot needs finite y values")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = _WIDTH - _ML - _MR
    ph = _HEIGHT - _MT - _MB
    to_px = lambda x: _ML + (x - x_lo) / (x_hi - x_lo) * pw
    to_py = lambda y: _MT + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH / 2:g}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for tx in _ticks(x_lo, x_hi):
        px = to_px(tx)
        out.append(
            f'<line x1="{px:.2f}" y1="{_MT + ph}" x2="{px:.2f}" y2="{_MT + ph + 4}" stroke="black"/>'
        )
        out.append(
            f'<text x="{px:.2f}" y="{_MT + ph + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        py = to_py(ty)
        out.append(
            f'<line x1="{_ML - 4}" y1="{py:.2f}" x2="{_ML}" y2="{py:.2f}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_ML - 8}" y="{py + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>'
        )
        out.append(
            f'<line x1="{_ML}" y1="{py:.2f}" x2="{_ML + pw}" y2="{py:.2f}" '
            f'stroke="#dddddd" stroke-width="0.5"/>'
        )
    out.append(
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    out.append(
        f'<text x="{_ML + pw / 2:g}" y="{_HEIGHT - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    out.append(
        f'<text x="16" y="{_MT + ph / 2:g}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_MT + ph / 2:g})">{y_label}</text>'
    )
    for i, (name, ys) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{to_px(x):.2f},{to_py(float(y)):.2f}"
            for x, y in zip(xs, ys)
            if math.isfinite(float(y))
        )
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = _MT + 14 + 16 * i
        out.append(
            f'<line x1="{_ML + pw - 120}" y1="{ly - 4}" x2="{_ML + pw - 100}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<text x="{_ML + pw - 94}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{name}</text>'
        )
    out.append("</svg>")
    data = "\n".join(out) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)
    return data
