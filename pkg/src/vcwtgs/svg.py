"""Minimal self-contained SVG line charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["line_chart"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
_W, _H = 640, 400
_L, _R, _T, _B = 70, 150, 40, 50


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _num(v: float) -> str:
    return f"{v:.6g}"


def line_chart(series, path, *, title: str = "", xlabel: str = "", ylabel: str = "",
               logy: bool = False, max_points: int = 2000) -> None:
    """Write ``series`` (iterable of ``(label, x, y)``) as a polyline chart.

    Non-finite points (and non-positive ones when ``logy``) are skipped.
    Long series are thinned to at most ``max_points`` evenly spaced points.
    """
    prepared = []
    for label, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        x, y = x[ok], y[ok]
        if x.shape[0] > max_points:
            idx = np.unique(np.linspace(0, x.shape[0] - 1, max_points).round().astype(int))
            x, y = x[idx], y[idx]
        if logy:
            y = np.log10(y)
        prepared.append((str(label), x, y))

    xs = [p[1] for p in prepared if p[1].size]
    ys = [p[2] for p in prepared if p[2].size]
    x0, x1 = (min(a.min() for a in xs), max(a.max() for a in xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(a.min() for a in ys), max(a.max() for a in ys)) if ys else (0.0, 1.0)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = _W - _L - _R, _H - _T - _B

    def sx(v):
        return _L + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return _T + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2 - _R / 2 + _L / 2}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<rect x="{_L}" y="{_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{sx(v):.2f}" y1="{_T + ph}" x2="{sx(v):.2f}" y2="{_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.2f}" y="{_T + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{_num(v)}</text>')
    for v in _ticks(y0, y1):
        lab = _num(10**v) if logy else _num(v)
        out.append(f'<line x1="{_L - 5}" y1="{sy(v):.2f}" x2="{_L}" y2="{sy(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{_L - 8}" y="{sy(v) + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{lab}</text>')
    out.append(f'<text x="{_L + pw / 2}" y="{_H - 10}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_T + ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {_T + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, x, y) in enumerate(prepared):
        colour = _PALETTE[k % len(_PALETTE)]
        if x.size:
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = _T + 14 + 18 * k
        out.append(f'<line x1="{_L + pw + 10}" y1="{ly}" x2="{_L + pw + 30}" y2="{ly}" stroke="{colour}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{_L + pw + 35}" y="{ly + 4}" font-family="sans-serif" font-size="11">'
                   f'{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
