"""Minimal self-contained SVG line charts."""
from __future__ import annotations

from typing import Sequence, Tuple
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 320
MARGIN = 56


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def line_chart(points: Sequence[Tuple[object, float]], title: str, xlabel: str, ylabel: str) -> str:
    """One polyline through ``points``; every point is also drawn as a ``circle.point``.

    Non-numeric x values are placed at evenly spaced positions in input order.
    """
    numeric = all(isinstance(x, (int, float)) and not isinstance(x, bool) for x, _ in points)
    xs = [float(x) if numeric else float(i) for i, (x, _) in enumerate(points)]
    ys = [float(y) for _, y in points]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(0.0, min(ys)), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x0) / (x1 - x0) * pw

    def py(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
        f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{_fmt(y0)}</text>',
        f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{_fmt(y1)}</text>',
    ]
    if points:
        path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{path}"/>')
    for (label, _), x, y in zip(points, xs, ys):
        out.append(f'<circle class="point" cx="{px(x):.2f}" cy="{py(y):.2f}" r="4" fill="steelblue" '
                   f'data-x="{escape(str(label))}" data-y="{_fmt(y)}"/>')
        out.append(f'<text x="{px(x):.2f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
