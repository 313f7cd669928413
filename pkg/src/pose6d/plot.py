"""Standalone SVG rendering of the accuracy-threshold curve."""
from __future__ import annotations

from html import escape

from .metrics import AUC_MAX_THRESHOLD, accuracy_curve, add_auc

WIDTH, HEIGHT = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 30, 50


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def accuracy_curve_svg(distances, max_threshold: float = AUC_MAX_THRESHOLD, title: str = "") -> str:
    xs, ys = accuracy_curve(distances, max_threshold)
    auc = add_auc(distances, max_threshold)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + pw * x / max_threshold

    def sy(y):
        return TOP + ph * (1.0 - y)

    pts = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in zip(xs, ys))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for i in range(6):
        x = max_threshold * i / 5
        y = i / 5
        out.append(f'<line x1="{_num(sx(x))}" y1="{TOP + ph}" x2="{_num(sx(x))}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(sx(x))}" y="{TOP + ph + 18}" font-size="11" text-anchor="middle">'
                   f'{x * 100:.0f}</text>')
        out.append(f'<line x1="{LEFT - 5}" y1="{_num(sy(y))}" x2="{LEFT}" y2="{_num(sy(y))}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_num(sy(y) + 4)}" font-size="11" text-anchor="end">{y:.1f}</text>')
    out.append(f'<text x="{LEFT + pw / 2:g}" y="{HEIGHT - 12}" font-size="12" text-anchor="middle">'
               f'threshold (cm)</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:g}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:g})">accuracy</text>')
    out.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{pts}"/>')
    label = f"AUC = {auc * 100:.2f}" + (f" ({escape(title)})" if title else "")
    out.append(f'<text x="{LEFT + pw - 4}" y="{TOP + ph - 10}" font-size="12" text-anchor="end">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
