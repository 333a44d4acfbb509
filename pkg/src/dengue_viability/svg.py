"""Minimal dependency-free SVG line/scatter plots."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
DASHES = ("", "6,4", "2,3", "8,3,2,3")

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 80, 20, 40, 60


def _fmt(x):
    return f"{x:.4g}"


def plot(series, xlim, ylim, xlabel="", ylabel="", title=""):
    """Render ``series`` (dicts with ``x``, ``y``, ``label``, optional
    ``kind`` in {"line", "points"}) into an SVG document string."""
    (x0, x1), (y0, y1) = xlim, ylim
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + (np.asarray(x, dtype=float) - x0) / (x1 - x0) * pw

    def py(y):
        return TOP + ph - (np.asarray(y, dtype=float) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for k in range(6):
        xv = x0 + (x1 - x0) * k / 5
        yv = y0 + (y1 - y0) * k / 5
        X, Y = px(xv), py(yv)
        out.append(f'<line x1="{X:.2f}" y1="{TOP + ph}" x2="{X:.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{_fmt(xv)}</text>')
        out.append(f'<line x1="{LEFT - 5}" y1="{Y:.2f}" x2="{LEFT}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt(yv)}</text>')
    out.append(f'<text x="{LEFT + pw / 2}" y="{H - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for k, s in enumerate(series):
        color = s.get("color", COLORS[k % len(COLORS)])
        xs, ys = px(s["x"]), py(s["y"])
        if s.get("kind", "line") == "points":
            for a, b in zip(xs, ys):
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>')
        else:
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
            dash = DASHES[k % len(DASHES)]
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                       f'stroke-width="1.8"{dash_attr}/>')
        ly = TOP + 16 + 16 * k
        out.append(f'<line x1="{W - RIGHT - 150}" y1="{ly - 4}" x2="{W - RIGHT - 125}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT - 120}" y="{ly}">{escape(str(s.get("label", "")))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path, *args, **kwargs):
    with open(path, "w") as f:
        f.write(plot(*args, **kwargs))
