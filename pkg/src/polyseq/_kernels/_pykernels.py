"""Numpy fallback implementations of the raster kernels.

The compiled backend (`_ckernels.pyx`) mirrors these functions statement for
statement; every float expression is written in the same order so that both
backends produce bit-identical rasters and counts (the compiled module is
built with -ffp-contract=off for the same reason). Change one, change both.

Conventions: all geometry is in normalized [0, 1] image coordinates, x to the
right and y down. Canvases are uint8 (h, w) arrays indexed [row, col]; pixel
(i, j) has its center at ((j + 0.5) / w, (i + 0.5) / h). Distances for the
stroke and disc hit tests are Euclidean in normalized units, so halfwidth and
radius are fractions of the canvas extent. `raster_iou_counts` samples the
same grid of cell centers at its own square resolution.
"""

import math

import numpy as np

MAX_POLY_VERTS = 128


def draw_segment(canvas, x0, y0, x1, y1, halfwidth, value):
    """Set pixels whose center lies within `halfwidth` of the segment (round caps)."""
    h, w = canvas.shape
    dx = x1 - x0
    dy = y1 - y0
    length2 = dx * dx + dy * dy

    xmin = min(x0, x1) - halfwidth
    xmax = max(x0, x1) + halfwidth
    ymin = min(y0, y1) - halfwidth
    ymax = max(y0, y1) + halfwidth
    j_lo = max(0, math.ceil(xmin * w - 0.5))
    j_hi = min(w - 1, math.floor(xmax * w - 0.5))
    i_lo = max(0, math.ceil(ymin * h - 0.5))
    i_hi = min(h - 1, math.floor(ymax * h - 0.5))
    if j_lo > j_hi or i_lo > i_hi:
        return

    px = (np.arange(j_lo, j_hi + 1, dtype=np.float64)[None, :] + 0.5) / w
    py = (np.arange(i_lo, i_hi + 1, dtype=np.float64)[:, None] + 0.5) / h
    if length2 == 0.0:
        qx, qy = x0, y0
    else:
        t = ((px - x0) * dx + (py - y0) * dy) / length2
        t = np.clip(t, 0.0, 1.0)
        qx = x0 + t * dx
        qy = y0 + t * dy
    ddx = px - qx
    ddy = py - qy
    hit = ddx * ddx + ddy * ddy <= halfwidth * halfwidth
    region = canvas[i_lo : i_hi + 1, j_lo : j_hi + 1]
    region[hit] = value


def draw_disc(canvas, cx, cy, radius, value):
    """Set pixels whose center lies within `radius` of (cx, cy)."""
    h, w = canvas.shape
    j_lo = max(0, math.ceil((cx - radius) * w - 0.5))
    j_hi = min(w - 1, math.floor((cx + radius) * w - 0.5))
    i_lo = max(0, math.ceil((cy - radius) * h - 0.5))
    i_hi = min(h - 1, math.floor((cy + radius) * h - 0.5))
    if j_lo > j_hi or i_lo > i_hi:
        return

    px = (np.arange(j_lo, j_hi + 1, dtype=np.float64)[None, :] + 0.5) / w
    py = (np.arange(i_lo, i_hi + 1, dtype=np.float64)[:, None] + 0.5) / h
    ddx = px - cx
    ddy = py - cy
    hit = ddx * ddx + ddy * ddy <= radius * radius
    region = canvas[i_lo : i_hi + 1, j_lo : j_hi + 1]
    region[hit] = value


def _row_spans(verts, yc, resolution):
    """Integer cell-column bounds of the even-odd inside spans for each row.

    Returns (lo, hi) int64 arrays of shape (n_rows, n_spans); a row's cells
    inside the polygon are the columns j with lo <= j < hi for some span.
    """
    m = verts.shape[0]
    n_pad = m + (m & 1)
    crossings = np.full((yc.shape[0], n_pad), np.inf)
    for k in range(m):
        xa, ya = verts[k, 0], verts[k, 1]
        xb, yb = verts[(k + 1) % m, 0], verts[(k + 1) % m, 1]
        cond = (ya <= yc) != (yb <= yc)
        if yb == ya:
            continue
        xc = xa + (yc - ya) * (xb - xa) / (yb - ya)
        crossings[:, k] = np.where(cond, xc, np.inf)
    crossings.sort(axis=1)
    left = np.clip(crossings[:, 0::2], -1.0, 2.0)
    right = np.clip(crossings[:, 1::2], -1.0, 2.0)
    lo = np.clip(np.ceil(left * resolution - 0.5), 0, resolution).astype(np.int64)
    hi = np.clip(np.ceil(right * resolution - 0.5), 0, resolution).astype(np.int64)
    return lo, hi


def raster_iou_counts(verts_a, verts_b, resolution):
    """Count grid cells inside the intersection and the union of two polygons.

    Cells are the centers of a resolution x resolution grid over [0, 1]^2;
    inside-ness is the even-odd crossing rule. Returns (inter, union) counts.
    """
    verts_a = np.ascontiguousarray(verts_a, dtype=np.float64)
    verts_b = np.ascontiguousarray(verts_b, dtype=np.float64)
    if verts_a.shape[0] > MAX_POLY_VERTS or verts_b.shape[0] > MAX_POLY_VERTS:
        raise ValueError(f"polygon exceeds {MAX_POLY_VERTS} vertices")
    r = resolution
    ymin = min(verts_a[:, 1].min(), verts_b[:, 1].min())
    ymax = max(verts_a[:, 1].max(), verts_b[:, 1].max())
    i_lo = max(0, math.ceil(ymin * r - 0.5))
    i_hi = min(r - 1, math.floor(ymax * r - 0.5))
    if i_lo > i_hi:
        return 0, 0

    yc = (np.arange(i_lo, i_hi + 1, dtype=np.float64) + 0.5) / r
    with np.errstate(divide="ignore", invalid="ignore"):
        lo_a, hi_a = _row_spans(verts_a, yc, r)
        lo_b, hi_b = _row_spans(verts_b, yc, r)

    cnt_a = np.maximum(hi_a - lo_a, 0).sum(axis=1)
    cnt_b = np.maximum(hi_b - lo_b, 0).sum(axis=1)
    ov_lo = np.maximum(lo_a[:, :, None], lo_b[:, None, :])
    ov_hi = np.minimum(hi_a[:, :, None], hi_b[:, None, :])
    inter = np.maximum(ov_hi - ov_lo, 0).sum(axis=(1, 2))

    inter_total = int(inter.sum())
    union_total = int(cnt_a.sum() + cnt_b.sum() - inter.sum())
    return inter_total, union_total
