"""Time-series CSV and minimal SVG line charts."""

from __future__ import annotations

import math
import os
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .sim import COLUMNS, TimeSeries

__all__ = ["format_value", "write_timeseries_csv", "read_timeseries_csv", "svg_line_chart", "write_svg"]


def format_value(v: float) -> str:
    """17 significant digits: enough for an exact float round trip."""
    return format(float(v), ".17g")


def write_timeseries_csv(ts: TimeSeries, path) -> Path:
    path = Path(path)
    lines = [",".join(COLUMNS)]
    lines.extend(",".join(format_value(v) for v in row) for row in ts.data)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def read_timeseries_csv(path, name: str = "") -> TimeSeries:
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\r\n")
        if header != ",".join(COLUMNS):
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [[float(v) for v in line.rstrip("\r\n").split(",")] for line in fh if line.strip()]
    data = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
    return TimeSeries(data, name or Path(path).stem.removesuffix("_timeseries"))


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    span = hi - lo
    raw = span / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


def _robust_range(values: np.ndarray) -> tuple[float, float]:
    # start-up spikes would otherwise flatten everything else
    v = values[np.isfinite(values)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = np.percentile(v, [1, 99]) if v.size > 50 else (v.min(), v.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return float(lo - pad), float(hi + pad)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def svg_line_chart(t, series: dict, title: str = "", xlabel: str = "t [s]", width: int = 720, height: int = 320) -> str:
    """Static line chart with axes, ticks and a legend. Pure string output."""
    t = np.asarray(t, dtype=float)
    ml, mr, mt, mb = 64, 16, 28, 40
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = float(t.min()), float(t.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    stacked = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    y0, y1 = _robust_range(stacked)

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (1.0 - (np.clip(y, y0, y1) - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for xv in _nice_ticks(x0, x1):
        out.append(f'<line x1="{sx(xv):.1f}" y1="{mt + ph}" x2="{sx(xv):.1f}" y2="{mt + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xv:g}</text>')
    for yv in _nice_ticks(y0, y1):
        out.append(f'<line x1="{ml - 4}" y1="{sy(yv):.1f}" x2="{ml}" y2="{sy(yv):.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 6}" text-anchor="middle">{escape(xlabel)}</text>')

    for k, (label, y) in enumerate(series.items()):
        y = np.asarray(y, dtype=float)
        color = _PALETTE[k % len(_PALETTE)]
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = mt + 12 + 14 * k
        out.append(f'<line x1="{ml + pw - 90}" y1="{ly}" x2="{ml + pw - 70}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw - 66}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    return path
