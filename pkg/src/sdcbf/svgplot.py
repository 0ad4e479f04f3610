"""Minimal deterministic SVG line plots.

Hand-writes the SVG so outputs are byte-stable across environments and easy
to assert on (bound lines carry a data-level attribute).  Not a general
plotting library; just what the harness needs.
"""

from __future__ import annotations

import math

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#17becf", "#8c564b", "#7f7f7f")

_W, _H = 720, 400
_ML, _MR, _MT, _MB = 64, 16, 36, 44


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * step:
        out.append(round(t, 12))
        t += step
    return out


class LinePlot:
    """One x/y chart with named series and labeled horizontal rules."""

    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.series: list[tuple] = []
        self.hlines: list[tuple] = []

    def add_series(self, name: str, x, y, color: str | None = None,
                   dash: str | None = None) -> None:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        color = color or _COLORS[len(self.series) % len(_COLORS)]
        self.series.append((name, x, y, color, dash))

    def add_hline(self, level: float, label: str = "", color: str = "#444444") -> None:
        self.hlines.append((float(level), label, color))

    def _extent(self):
        xs = np.concatenate([s[1] for s in self.series]) if self.series else np.array([0.0, 1.0])
        ys = [s[2][np.isfinite(s[2])] for s in self.series]
        ys = np.concatenate([y for y in ys if y.size] or [np.array([0.0, 1.0])])
        y_extra = [h[0] for h in self.hlines]
        xlo, xhi = float(np.min(xs)), float(np.max(xs))
        ylo = min(float(np.min(ys)), *y_extra) if y_extra else float(np.min(ys))
        yhi = max(float(np.max(ys)), *y_extra) if y_extra else float(np.max(ys))
        if xhi <= xlo:
            xhi = xlo + 1.0
        pad = 0.06 * (yhi - ylo) or 1.0
        return xlo, xhi, ylo - pad, yhi + pad

    def render(self) -> str:
        xlo, xhi, ylo, yhi = self._extent()
        pw, ph = _W - _ML - _MR, _H - _MT - _MB

        def sx(x):
            return _ML + pw * (x - xlo) / (xhi - xlo)

        def sy(y):
            return _MT + ph * (1.0 - (y - ylo) / (yhi - ylo))

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
               f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
               f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
               f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{self.title}</text>']
        for t in _ticks(xlo, xhi):
            px = sx(t)
            out.append(f'<line x1="{_fmt(px)}" y1="{_MT}" x2="{_fmt(px)}" y2="{_H - _MB}" '
                       f'stroke="#dddddd" stroke-width="1"/>')
            out.append(f'<text x="{_fmt(px)}" y="{_H - _MB + 16}" text-anchor="middle">{_fmt(t)}</text>')
        for t in _ticks(ylo, yhi):
            py = sy(t)
            out.append(f'<line x1="{_ML}" y1="{_fmt(py)}" x2="{_W - _MR}" y2="{_fmt(py)}" '
                       f'stroke="#dddddd" stroke-width="1"/>')
            out.append(f'<text x="{_ML - 6}" y="{_fmt(py + 4)}" text-anchor="end">{_fmt(t)}</text>')
        out.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" '
                   f'fill="none" stroke="#222222"/>')
        for level, label, color in self.hlines:
            py = sy(level)
            out.append(f'<line x1="{_ML}" y1="{_fmt(py)}" x2="{_W - _MR}" y2="{_fmt(py)}" '
                       f'stroke="{color}" stroke-width="1.5" stroke-dasharray="6,3" '
                       f'data-level="{_fmt(level)}"/>')
            if label:
                out.append(f'<text x="{_W - _MR - 4}" y="{_fmt(py - 4)}" text-anchor="end" '
                           f'fill="{color}">{label}</text>')
        for idx, (name, x, y, color, dash) in enumerate(self.series):
            ok = np.isfinite(x) & np.isfinite(y)
            pts = " ".join(f"{_fmt(sx(xv))},{_fmt(sy(yv))}" for xv, yv in zip(x[ok], y[ok]))
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"{dash_attr} data-series="{name}"/>')
            out.append(f'<text x="{_ML + 8}" y="{_MT + 16 + 14 * idx}" fill="{color}">{name}</text>')
        out.append(f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle">{self.xlabel}</text>')
        out.append(f'<text x="16" y="{_MT - 10}" text-anchor="start">{self.ylabel}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())
