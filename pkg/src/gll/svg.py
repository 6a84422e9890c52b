"""Deterministic SVG scatter plots (no external plotting dependency, no
timestamps or other run-varying metadata)."""

from __future__ import annotations

import numpy as np

__all__ = ["scatter_svg"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _star(cx, cy, r):
    pts = []
    for i in range(10):
        rad = r if i % 2 == 0 else 0.45 * r
        ang = -np.pi / 2 + i * np.pi / 5
        pts.append(f"{cx + rad * np.cos(ang):.2f},{cy + rad * np.sin(ang):.2f}")
    return " ".join(pts)


def scatter_svg(path, points, labels, starred=None, title="", size=440):
    """Write a class-coloured scatter plot; starred rows (the labeled base
    points) are drawn as stars on top."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    starred = (
        np.zeros(len(points), dtype=bool)
        if starred is None
        else np.asarray(starred, dtype=bool)
    )
    margin = 30.0
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)

    def to_px(p):
        x = margin + (p[0] - lo[0]) / span[0] * (size - 2 * margin)
        y = size - margin - (p[1] - lo[1]) / span[1] * (size - 2 * margin)
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{size / 2:.0f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{title}</text>'
        )
    order = np.argsort(~starred, kind="stable")[::-1]  # plain dots first
    for i in order:
        color = _COLORS[labels[i] % len(_COLORS)]
        x, y = to_px(points[i])
        if starred[i]:
            parts.append(
                f'<polygon points="{_star(x, y, 8.0)}" fill="{color}" '
                'stroke="black" stroke-width="0.8"/>'
            )
        else:
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}" fill-opacity="0.75"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts))
        f.write("\n")
