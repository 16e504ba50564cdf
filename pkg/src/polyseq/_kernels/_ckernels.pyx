# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled raster kernels.

Statement-for-statement mirror of `_pykernels.py`; float expressions are kept
in the same evaluation order (and the module is compiled with
-ffp-contract=off) so both backends produce bit-identical output.
"""

from libc.math cimport ceil, floor, INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef enum:
    MAX_VERTS = 128
    MAX_SPANS = 65


def draw_segment(cnp.uint8_t[:, ::1] canvas, double x0, double y0,
                 double x1, double y1, double halfwidth, int value):
    """Set pixels whose center lies within `halfwidth` of the segment (round caps)."""
    cdef Py_ssize_t h = canvas.shape[0]
    cdef Py_ssize_t w = canvas.shape[1]
    cdef double dx = x1 - x0
    cdef double dy = y1 - y0
    cdef double length2 = dx * dx + dy * dy
    cdef double hw2 = halfwidth * halfwidth

    cdef double xmin = (x0 if x0 < x1 else x1) - halfwidth
    cdef double xmax = (x0 if x0 > x1 else x1) + halfwidth
    cdef double ymin = (y0 if y0 < y1 else y1) - halfwidth
    cdef double ymax = (y0 if y0 > y1 else y1) + halfwidth
    cdef Py_ssize_t j_lo = max(0, <Py_ssize_t>ceil(xmin * w - 0.5))
    cdef Py_ssize_t j_hi = min(w - 1, <Py_ssize_t>floor(xmax * w - 0.5))
    cdef Py_ssize_t i_lo = max(0, <Py_ssize_t>ceil(ymin * h - 0.5))
    cdef Py_ssize_t i_hi = min(h - 1, <Py_ssize_t>floor(ymax * h - 0.5))
    if j_lo > j_hi or i_lo > i_hi:
        return

    cdef Py_ssize_t i, j
    cdef double px, py, t, qx, qy, ddx, ddy
    cdef cnp.uint8_t v = <cnp.uint8_t>value
    for i in range(i_lo, i_hi + 1):
        py = (i + 0.5) / h
        for j in range(j_lo, j_hi + 1):
            px = (j + 0.5) / w
            if length2 == 0.0:
                qx = x0
                qy = y0
            else:
                t = ((px - x0) * dx + (py - y0) * dy) / length2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                qx = x0 + t * dx
                qy = y0 + t * dy
            ddx = px - qx
            ddy = py - qy
            if ddx * ddx + ddy * ddy <= hw2:
                canvas[i, j] = v


def draw_disc(cnp.uint8_t[:, ::1] canvas, double cx, double cy,
              double radius, int value):
    """Set pixels whose center lies within `radius` of (cx, cy)."""
    cdef Py_ssize_t h = canvas.shape[0]
    cdef Py_ssize_t w = canvas.shape[1]
    cdef Py_ssize_t j_lo = max(0, <Py_ssize_t>ceil((cx - radius) * w - 0.5))
    cdef Py_ssize_t j_hi = min(w - 1, <Py_ssize_t>floor((cx + radius) * w - 0.5))
    cdef Py_ssize_t i_lo = max(0, <Py_ssize_t>ceil((cy - radius) * h - 0.5))
    cdef Py_ssize_t i_hi = min(h - 1, <Py_ssize_t>floor((cy + radius) * h - 0.5))
    if j_lo > j_hi or i_lo > i_hi:
        return

    cdef double r2 = radius * radius
    cdef Py_ssize_t i, j
    cdef double px, py, ddx, ddy
    cdef cnp.uint8_t v = <cnp.uint8_t>value
    for i in range(i_lo, i_hi + 1):
        py = (i + 0.5) / h
        for j in range(j_lo, j_hi + 1):
            px = (j + 0.5) / w
            ddx = px - cx
            ddy = py - cy
            if ddx * ddx + ddy * ddy <= r2:
                canvas[i, j] = v


cdef inline Py_ssize_t _cell_bound(double v, Py_ssize_t resolution) noexcept:
    # clip to [-1, 2] before scaling so inf crossings stay finite
    if v < -1.0:
        v = -1.0
    elif v > 2.0:
        v = 2.0
    cdef double c = ceil(v * resolution - 0.5)
    if c < 0.0:
        return 0
    if c > resolution:
        return resolution
    return <Py_ssize_t>c


cdef Py_ssize_t _row_spans(const double[:, ::1] verts, double yc,
                           Py_ssize_t resolution, Py_ssize_t* lo,
                           Py_ssize_t* hi) noexcept:
    """Fill integer cell-column bounds of the even-odd inside spans of one row."""
    cdef Py_ssize_t m = verts.shape[0]
    cdef double crossings[MAX_VERTS + 2]
    cdef Py_ssize_t n_pad = m + (m & 1)
    cdef Py_ssize_t k, kk
    cdef double xa, ya, xb, yb, xc, key
    for k in range(n_pad):
        crossings[k] = INFINITY
    for k in range(m):
        xa = verts[k, 0]
        ya = verts[k, 1]
        xb = verts[(k + 1) % m, 0]
        yb = verts[(k + 1) % m, 1]
        if yb == ya:
            continue
        if (ya <= yc) != (yb <= yc):
            xc = xa + (yc - ya) * (xb - xa) / (yb - ya)
            crossings[k] = xc
    # insertion sort; equal keys keep parity identical to np.sort
    for k in range(1, n_pad):
        key = crossings[k]
        kk = k - 1
        while kk >= 0 and crossings[kk] > key:
            crossings[kk + 1] = crossings[kk]
            kk -= 1
        crossings[kk + 1] = key

    cdef Py_ssize_t n_spans = n_pad // 2
    for k in range(n_spans):
        lo[k] = _cell_bound(crossings[2 * k], resolution)
        hi[k] = _cell_bound(crossings[2 * k + 1], resolution)
    return n_spans


def raster_iou_counts(verts_a, verts_b, Py_ssize_t resolution):
    """Count grid cells inside the intersection and the union of two polygons.

    Cells are the centers of a resolution x resolution grid over [0, 1]^2;
    inside-ness is the even-odd crossing rule. Returns (inter, union) counts.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] va = \
        np.ascontiguousarray(verts_a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] vb = \
        np.ascontiguousarray(verts_b, dtype=np.float64)
    if va.shape[0] > MAX_VERTS or vb.shape[0] > MAX_VERTS:
        raise ValueError(f"polygon exceeds {MAX_VERTS} vertices")

    cdef Py_ssize_t r = resolution
    cdef double ymin = min(va[:, 1].min(), vb[:, 1].min())
    cdef double ymax = max(va[:, 1].max(), vb[:, 1].max())
    cdef Py_ssize_t i_lo = max(0, <Py_ssize_t>ceil(ymin * r - 0.5))
    cdef Py_ssize_t i_hi = min(r - 1, <Py_ssize_t>floor(ymax * r - 0.5))
    if i_lo > i_hi:
        return 0, 0

    cdef const double[:, ::1] mva = va
    cdef const double[:, ::1] mvb = vb
    cdef Py_ssize_t lo_a[MAX_SPANS]
    cdef Py_ssize_t hi_a[MAX_SPANS]
    cdef Py_ssize_t lo_b[MAX_SPANS]
    cdef Py_ssize_t hi_b[MAX_SPANS]
    cdef long long inter_total = 0
    cdef long long union_total = 0
    cdef long long cnt_a, cnt_b, inter, d
    cdef Py_ssize_t i, p, q, na, nb
    cdef double yc
    for i in range(i_lo, i_hi + 1):
        yc = (i + 0.5) / r
        na = _row_spans(mva, yc, r, lo_a, hi_a)
        nb = _row_spans(mvb, yc, r, lo_b, hi_b)
        cnt_a = 0
        for p in range(na):
            d = hi_a[p] - lo_a[p]
            if d > 0:
                cnt_a += d
        cnt_b = 0
        for q in range(nb):
            d = hi_b[q] - lo_b[q]
            if d > 0:
                cnt_b += d
        inter = 0
        for p in range(na):
            if hi_a[p] <= lo_a[p]:
                continue
            for q in range(nb):
                d = min(hi_a[p], hi_b[q]) - max(lo_a[p], lo_b[q])
                if d > 0:
                    inter += d
        inter_total += inter
        union_total += cnt_a + cnt_b - inter
    return int(inter_total), int(union_total)
