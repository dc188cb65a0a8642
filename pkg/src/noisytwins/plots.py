"""Minimal SVG line plots with mean +/- std bands (no plotting dependency)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = 50


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_plot_svg(xs, means, stds, title: str, xlabel: str, ylabel: str) -> str:
    """One polyline through ``(x, mean)`` with a shaded ``mean +/- std`` band."""
    pts = [(float(x), float(m), float(s)) for x, m, s in zip(xs, means, stds) if math.isfinite(m)]
    pts.sort()
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    x0, y0, x1, y1 = MARGIN, HEIGHT - MARGIN, WIDTH - 20, 35
    lines.append(f'<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>')
    if pts:
        s_clean = [s if math.isfinite(s) else 0.0 for _, _, s in pts]
        xlo, xhi = pts[0][0], pts[-1][0]
        ylo = min(m - s for (_, m, _), s in zip(pts, s_clean))
        yhi = max(m + s for (_, m, _), s in zip(pts, s_clean))
        if yhi == ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5

        def px(x):
            return x0 + (x1 - x0) * (0.5 if xhi == xlo else (x - xlo) / (xhi - xlo))

        def py(y):
            return y0 - (y0 - y1) * (y - ylo) / (yhi - ylo)

        upper = [f"{px(x):.2f},{py(m + s):.2f}" for (x, m, _), s in zip(pts, s_clean)]
        lower = [f"{px(x):.2f},{py(m - s):.2f}" for (x, m, _), s in reversed(list(zip(pts, s_clean)))]
        lines.append(f'<polygon points="{" ".join(upper + lower)}" fill="steelblue" fill-opacity="0.25" stroke="none"/>')
        mid = " ".join(f"{px(x):.2f},{py(m):.2f}" for x, m, _ in pts)
        lines.append(f'<polyline points="{mid}" fill="none" stroke="steelblue" stroke-width="2"/>')
        for x, m, _ in pts:
            lines.append(f'<circle cx="{px(x):.2f}" cy="{py(m):.2f}" r="3" fill="steelblue"/>')
        for x, _, _ in pts:
            lines.append(f'<text x="{px(x):.2f}" y="{y0 + 15}" text-anchor="middle" font-size="10">{x:.4g}</text>')
        for t in _ticks(ylo, yhi):
            lines.append(f'<text x="{x0 - 4}" y="{py(t) + 3:.2f}" text-anchor="end" font-size="10">{t:.3g}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
