"""Deterministic SVG line charts drawn from sweep CSV files alone."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 55}
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")

SERIES = {
    "ratio": (("mean_coop_ratio", "cooperative"), ("mean_defect_ratio", "defective")),
    "utility": (("weighted_mean_util", "weighted mean utility"),),
}


def read_series(csv_text: str, columns: tuple[str, ...]) -> tuple[list[float], dict[str, list[float]], str, str]:
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    if not rows:
        raise ValueError("CSV has no data rows")
    xs = [float(r["sweep_value"]) for r in rows]
    ys = {c: [float(r[c]) for r in rows] for c in columns}
    return xs, ys, rows[0]["sweep_variable"], rows[0]["scheme"]


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step - 1e-9) * step
    out = []
    t = first
    while t <= hi + step * 1e-9:
        out.append(round(t, 12))
        t += step
    return out


def _fmt(v: float) -> str:
    return f"{v:g}"


def render(csv_text: str, mode: str = "ratio", title: str | None = None) -> str:
    columns = SERIES[mode]
    xs, ys, xname, scheme = read_series(csv_text, tuple(c for c, _ in columns))
    x_lo, x_hi = min(xs), max(xs)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if mode == "ratio":
        y_lo, y_hi = 0.0, 1.0
    else:
        values = [v for series in ys.values() for v in series]
        y_lo, y_hi = min(values), max(values)
        pad = (y_hi - y_lo) * 0.05 or 1.0
        y_lo, y_hi = y_lo - pad, y_hi + pad

    left, top = MARGIN["left"], MARGIN["top"]
    plot_w = WIDTH - left - MARGIN["right"]
    plot_h = HEIGHT - top - MARGIN["bottom"]

    def px(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return top + (y_hi - y) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">'
        f"{escape(title or f'{scheme}: {mode} vs {xname}')}</text>",
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + plot_h}" x2="{x:.2f}" y2="{top + plot_h + 5}" stroke="black"/>')
        out.append(
            f'<text x="{x:.2f}" y="{top + plot_h + 18}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{_fmt(t)}</text>'
        )
    for t in _ticks(y_lo, y_hi):
        y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{left - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{_fmt(t)}</text>'
        )
    out.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{escape(xname)}</text>'
    )
    for idx, (column, label) in enumerate(columns):
        colour = COLOURS[idx % len(COLOURS)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys[column]))
        out.append(f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="2"/>')
        for x, y in zip(xs, ys[column]):
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{colour}"/>')
        ly = top + 14 + idx * 16
        lx = left + plot_w - 150
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 20}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" font-family="sans-serif" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_file(csv_path: str | Path, mode: str = "ratio") -> str:
    return render(Path(csv_path).read_text(encoding="utf-8"), mode)
