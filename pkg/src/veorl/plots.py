"""Dependency-free SVG plotting: bars with error whiskers, lines, scatters."""
from __future__ import annotations

from pathlib import Path

W, H = 640, 420
MARGIN = 60
_COLORS = ["#c23b3b", "#3b6fc2", "#3bc26e", "#c2a33b", "#8e3bc2",
           "#3bbcc2", "#c23b8e", "#707070"]


def _header(title):
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}">',
             f'<rect width="{W}" height="{H}" fill="white"/>']
    if title:
        parts.append(f'<text x="{W/2}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="16">{title}</text>')
    return parts


def _axes(parts):
    parts.append(f'<line x1="{MARGIN}" y1="{H-MARGIN}" x2="{W-MARGIN}" '
                 f'y2="{H-MARGIN}" stroke="black"/>')
    parts.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" '
                 f'y2="{H-MARGIN}" stroke="black"/>')


def _scale(vmin, vmax):
    if vmax <= vmin:
        vmax = vmin + 1.0
    span = vmax - vmin
    return vmin - 0.05 * span, vmax + 0.05 * span


def bar_chart(labels, values, errors, path, title=""):
    """Vertical bars with +/- std-error whiskers."""
    if not (len(labels) == len(values) == len(errors)):
        raise ValueError("labels/values/errors length mismatch")
    lo, hi = _scale(min(0.0, min(v - e for v, e in zip(values, errors))),
                    max(v + e for v, e in zip(values, errors)))
    def y(v):
        return H - MARGIN - (v - lo) / (hi - lo) * (H - 2 * MARGIN)
    parts = _header(title)
    _axes(parts)
    n = len(values)
    slot = (W - 2 * MARGIN) / n
    for i, (label, v, e) in enumerate(zip(labels, values, errors)):
        x0 = MARGIN + i * slot + 0.2 * slot
        bw = 0.6 * slot
        top, base = min(y(v), y(0.0)), max(y(v), y(0.0))
        parts.append(f'<rect x="{x0:.1f}" y="{top:.1f}" width="{bw:.1f}" '
                     f'height="{base-top:.1f}" fill="{_COLORS[i % len(_COLORS)]}"/>')
        cx = x0 + bw / 2
        parts.append(f'<line x1="{cx:.1f}" y1="{y(v-e):.1f}" x2="{cx:.1f}" '
                     f'y2="{y(v+e):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{cx-5:.1f}" y1="{y(v-e):.1f}" x2="{cx+5:.1f}" '
                     f'y2="{y(v-e):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{cx-5:.1f}" y1="{y(v+e):.1f}" x2="{cx+5:.1f}" '
                     f'y2="{y(v+e):.1f}" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{H-MARGIN+18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def line_chart(series, path, title="", xlabel="", ylabel=""):
    """series: {name: (xs, ys)}."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        raise ValueError("no data to plot")
    xlo, xhi = _scale(min(xs_all), max(xs_all))
    ylo, yhi = _scale(min(ys_all), max(ys_all))
    def px(x):
        return MARGIN + (x - xlo) / (xhi - xlo) * (W - 2 * MARGIN)
    def py(y):
        return H - MARGIN - (y - ylo) / (yhi - ylo) * (H - 2 * MARGIN)
    parts = _header(title)
    _axes(parts)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{W-MARGIN-5}" y="{MARGIN+16*(i+1)}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{color}">{name}</text>')
    if xlabel:
        parts.append(f'<text x="{W/2}" y="{H-14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{H/2}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 16 {H/2})">{ylabel}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def scatter_chart(points, path, title=""):
    """points: list of (x, y, group); one color per group."""
    if not points:
        raise ValueError("no data to plot")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    groups = sorted({p[2] for p in points}, key=str)
    xlo, xhi = _scale(min(xs), max(xs))
    ylo, yhi = _scale(min(ys), max(ys))
    def px(x):
        return MARGIN + (x - xlo) / (xhi - xlo) * (W - 2 * MARGIN)
    def py(y):
        return H - MARGIN - (y - ylo) / (yhi - ylo) * (H - 2 * MARGIN)
    parts = _header(title)
    _axes(parts)
    color_of = {g: _COLORS[i % len(_COLORS)] for i, g in enumerate(groups)}
    for x, y, g in points:
        parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" '
                     f'fill="{color_of[g]}" fill-opacity="0.7"/>')
    for i, g in enumerate(groups):
        parts.append(f'<text x="{W-MARGIN-5}" y="{MARGIN+16*(i+1)}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="12" '
                     f'fill="{color_of[g]}">{g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
