"""Step plot of piecewise-constant intensities with dashed confidence bands, as SVG."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .estimate import NO_EXPOSURE, FitResult
from .inference import wald_ci

WIDTH, HEIGHT = 720, 440
MARGIN = {"left": 70, "right": 150, "top": 30, "bottom": 55}
STYLES = {"S1D": "#808080", "HD": "#000000"}
AGE_OFFSET = 50.0


def _nice_step(span: float, target: int = 6) -> float:
    raw = span / target
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _segments(fit: FitResult, transition: str, level: float):
    """(lo, hi, estimate, ci_lo, ci_hi) per interval; None where undefined."""
    out = []
    for p in fit.series(transition):
        if p.status == NO_EXPOSURE:
            out.append(None)
        else:
            lo, hi = wald_ci(p, level=level)
            out.append((p.interval[0], p.interval[1], p.estimate, lo, hi))
    return out


def _runs(segs):
    """Split into maximal runs of adjacent defined intervals; undefined ones become gaps."""
    run = []
    for s in segs:
        if s is None:
            if run:
                yield run
            run = []
        else:
            run.append(s)
    if run:
        yield run


def _step_path(run, value_index: int, sx, sy) -> str:
    pts = []
    for seg in run:
        y = sy(seg[value_index])
        pts.append(f"{sx(seg[0]):.2f},{y:.2f}")
        pts.append(f"{sx(seg[1]):.2f},{y:.2f}")
    return "M" + " L".join(pts)


def step_plot_svg(
    fit: FitResult, transitions=("S1D", "HD"), level: float = 0.95, title: str | None = None
) -> str:
    if fit.partition is None or fit.partition.n_intervals < 2:
        raise ValueError("plot needs a piecewise fit with at least two intervals; fit with a partition")
    series = {t: _segments(fit, t, level) for t in transitions}
    defined = [s for segs in series.values() for s in segs if s is not None]
    if not defined:
        raise ValueError("no interval has a defined estimate")
    x0, x1 = fit.partition.breaks[0], fit.partition.breaks[-1]
    y1 = max(max(s[4] for s in defined), max(s[2] for s in defined)) * 1.05 or 1.0
    y0 = min(0.0, min(s[3] for s in defined))

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(t):
        return MARGIN["left"] + (t - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (y1 - v) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle">{escape(title)}</text>')

    # axes
    bx, by = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{bx}" y1="{by}" x2="{bx + pw}" y2="{by}" stroke="black"/>')
    out.append(f'<line x1="{bx}" y1="{MARGIN["top"]}" x2="{bx}" y2="{by}" stroke="black"/>')
    for b in fit.partition.breaks:
        x = sx(b)
        out.append(f'<line x1="{x:.2f}" y1="{by}" x2="{x:.2f}" y2="{by + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{by + 18}" text-anchor="middle">{b + AGE_OFFSET:g}</text>')
    out.append(f'<text x="{bx + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">age (years)</text>')
    step = _nice_step(y1 - y0)
    k = math.ceil(y0 / step)
    while k * step <= y1 + 1e-12:
        v = k * step
        y = sy(v)
        out.append(f'<line x1="{bx - 5}" y1="{y:.2f}" x2="{bx}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{bx - 8}" y="{y + 4:.2f}" text-anchor="end">{v:.3g}</text>')
        k += 1
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">intensity per year</text>'
    )

    for i, (t, segs) in enumerate(series.items()):
        color = STYLES.get(t, "#1f77b4")
        for run in _runs(segs):
            out.append(f'<path class="estimate {t}" d="{_step_path(run, 2, sx, sy)}" fill="none" '
                       f'stroke="{color}" stroke-width="2"/>')
            for j in (3, 4):
                out.append(f'<path class="ci {t}" d="{_step_path(run, j, sx, sy)}" fill="none" '
                           f'stroke="{color}" stroke-width="1" stroke-dasharray="5,4"/>')
        ly = MARGIN["top"] + 20 + 36 * i
        lx = WIDTH - MARGIN["right"] + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 32}" y="{ly + 4}">{escape(t)}</text>')
        out.append(f'<line x1="{lx}" y1="{ly + 14}" x2="{lx + 25}" y2="{ly + 14}" stroke="{color}" '
                   f'stroke-dasharray="5,4"/>')
        out.append(f'<text x="{lx + 32}" y="{ly + 18}">{level:.0%} CI</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
