"""Dependency-free deterministic SVG line plots.

Same data in, same bytes out: coordinates are formatted to fixed precision
and nothing time- or environment-dependent is written. Enough for loss
curves and PR curves; not a plotting library.
"""

import pathlib

import numpy as np

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
MARGIN = dict(left=56, right=16, top=28, bottom=40)


def _fmt(v):
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def line_plot(series, path, title="", xlabel="", ylabel="",
              xlim=None, ylim=None, size=(640, 440), legend=True):
    """series: iterable of (label, xs, ys). Writes an SVG file at path."""
    series = [(str(lbl), np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
              for lbl, xs, ys in series]
    if xlim is None:
        allx = np.concatenate([xs for _, xs, _ in series if len(xs)] or [np.zeros(1)])
        xlim = (float(allx.min()), float(allx.max()))
    if ylim is None:
        ally = np.concatenate([ys for _, _, ys in series if len(ys)] or [np.zeros(1)])
        pad = 0.05 * (ally.max() - ally.min() or 1.0)
        ylim = (float(ally.min() - pad), float(ally.max() + pad))
    if xlim[1] <= xlim[0]:
        xlim = (xlim[0], xlim[0] + 1.0)
    if ylim[1] <= ylim[0]:
        ylim = (ylim[0], ylim[0] + 1.0)

    w, h = size
    px0, px1 = MARGIN["left"], w - MARGIN["right"]
    py0, py1 = h - MARGIN["bottom"], MARGIN["top"]

    def sx(x):
        return px0 + (x - xlim[0]) / (xlim[1] - xlim[0]) * (px1 - px0)

    def sy(y):
        return py0 + (y - ylim[0]) / (ylim[1] - ylim[0]) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{w / 2:.1f}" y="18" font-family="sans-serif" '
            f'font-size="13" text-anchor="middle" fill="#111">{title}</text>'
        )
    for tx in _ticks(*xlim):
        x = sx(tx)
        parts.append(
            f'<line x1="{x:.2f}" y1="{py0}" x2="{x:.2f}" y2="{py0 + 4}" '
            'stroke="#333"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{py0 + 16}" font-family="sans-serif" '
            f'font-size="10" text-anchor="middle" fill="#333">{_fmt(tx)}</text>'
        )
    for ty in _ticks(*ylim):
        y = sy(ty)
        parts.append(
            f'<line x1="{px0 - 4}" y1="{y:.2f}" x2="{px0}" y2="{y:.2f}" '
            'stroke="#333"/>'
        )
        parts.append(
            f'<text x="{px0 - 7}" y="{y + 3:.2f}" font-family="sans-serif" '
            f'font-size="10" text-anchor="end" fill="#333">{_fmt(ty)}</text>'
        )
    if xlabel:
        parts.append(
            f'<text x="{(px0 + px1) / 2:.1f}" y="{h - 8}" '
            'font-family="sans-serif" font-size="11" text-anchor="middle" '
            f'fill="#111">{xlabel}</text>'
        )
    if ylabel:
        cx, cy = 14, (py0 + py1) / 2
        parts.append(
            f'<text x="{cx}" y="{cy:.1f}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle" fill="#111" '
            f'transform="rotate(-90 {cx} {cy:.1f})">{ylabel}</text>'
        )

    for k, (label, xs, ys) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        if len(xs):
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                'stroke-width="1.5"/>'
            )
        if legend:
            ly = py1 + 14 + 14 * k
            parts.append(
                f'<line x1="{px1 - 120}" y1="{ly - 4}" x2="{px1 - 100}" '
                f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
            )
            parts.append(
                f'<text x="{px1 - 95}" y="{ly}" font-family="sans-serif" '
                f'font-size="10" fill="#111">{label}</text>'
            )
    parts.append("</svg>")
    out = pathlib.Path(path)
    out.write_text("\n".join(parts) + "\n")
    return out
