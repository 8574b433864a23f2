"""Minimal SVG line charts (no plotting dependency)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def line_chart(t, series: dict, title: str, ylabel: str, width: int = 720, height: int = 360) -> str:
    t = np.asarray(t, dtype=float)
    left, right, top, bottom = 70, 150, 30, 40
    pw, ph = width - left - right, height - top - bottom
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    t0, t1 = float(t.min()), float(t.max()) if t.size else 1.0
    if t1 == t0:
        t1 = t0 + 1.0

    def px(tv):
        return left + (tv - t0) / (t1 - t0) * pw

    def py(yv):
        return top + (y1 - yv) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left - 8}" y="{top + 4}" text-anchor="end">{y1:.6g}</text>',
        f'<text x="{left - 8}" y="{top + ph}" text-anchor="end">{y0:.6g}</text>',
        f'<text x="{left}" y="{top + ph + 16}">{t0:.6g}</text>',
        f'<text x="{left + pw}" y="{top + ph + 16}" text-anchor="end">{t1:.6g} s</text>',
        f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>',
    ]
    # one point per horizontal pixel is plenty
    step = max(1, t.size // (2 * pw))
    for k, (name, vals) in enumerate(series.items()):
        vals = np.asarray(vals, dtype=float)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(t[::step], vals[::step]))
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = top + 12 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
