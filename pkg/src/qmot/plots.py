"""Minimal static SVG line and scatter plots for sweep reports."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, PAD = 640, 400, 60
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _scale(lo: float, hi: float, a: float, b: float):
    if hi <= lo:
        hi = lo + 1.0
    return lambda v: a + (np.asarray(v, dtype=float) - lo) / (hi - lo) * (b - a)


def _axes(parts, xlo, xhi, ylo, yhi, xlabel, ylabel, title):
    x0, x1, y0, y1 = PAD, WIDTH - PAD / 2, HEIGHT - PAD, PAD / 2
    parts.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#333"/>')
    for k in range(5):
        fx = xlo + (xhi - xlo) * k / 4
        fy = ylo + (yhi - ylo) * k / 4
        px = x0 + (x1 - x0) * k / 4
        py = y0 - (y0 - y1) * k / 4
        parts.append(f'<text x="{px:.1f}" y="{y0 + 16}" font-size="11" text-anchor="middle">{fx:.3g}</text>')
        parts.append(f'<text x="{x0 - 6}" y="{py + 4:.1f}" font-size="11" text-anchor="end">{fy:.3g}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 15}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="15" y="{(y0 + y1) / 2}" font-size="13" text-anchor="middle" '
                 f'transform="rotate(-90 15 {(y0 + y1) / 2})">{escape(ylabel)}</text>')
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="18" font-size="14" text-anchor="middle">{escape(title)}</text>')
    return _scale(xlo, xhi, x0, x1), _scale(ylo, yhi, y0, y1)


def _bounds(values):
    v = np.concatenate([np.asarray(x, dtype=float).ravel() for x in values]) if values else np.zeros(1)
    v = v[np.isfinite(v)]
    if not v.size:
        return 0.0, 1.0
    return float(v.min()), float(v.max())


def line_plot(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], path: str | Path,
              xlabel: str = "", ylabel: str = "", title: str = "", ylim=None) -> None:
    xlo, xhi = _bounds([s[0] for s in series.values()])
    ylo, yhi = ylim if ylim is not None else _bounds([s[1] for s in series.values()])
    parts = []
    sx, sy = _axes(parts, xlo, xhi, ylo, yhi, xlabel, ylabel, title)
    for k, (name, (x, y)) in enumerate(series.items()):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx(x), sy(y)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - PAD}" y="{PAD / 2 + 16 * (k + 1)}" font-size="11" '
                     f'text-anchor="end" fill="{color}">{escape(name)}</text>')
    _write(parts, path)


def scatter_plot(x: Sequence[float], y: Sequence[float], path: str | Path, sizes: Sequence[float] | None = None,
                 xlabel: str = "", ylabel: str = "", title: str = "") -> None:
    xlo, xhi = _bounds([x])
    ylo, yhi = _bounds([y])
    parts = []
    sx, sy = _axes(parts, xlo, xhi, ylo, yhi, xlabel, ylabel, title)
    sizes = np.ones(len(x)) if sizes is None else np.asarray(sizes, dtype=float)
    radius = 1.5 + 4.0 * np.sqrt(sizes / max(sizes.max(initial=1.0), 1e-12))
    for a, b, r in zip(sx(x), sy(y), radius):
        parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{r:.2f}" fill="{COLORS[0]}" fill-opacity="0.5"/>')
    _write(parts, path)


def _write(parts, path):
    body = "\n".join(parts)
    Path(path).write_text(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
    )
