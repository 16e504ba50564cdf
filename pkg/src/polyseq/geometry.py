"""Polygon geometry on normalized image coordinates.

All functions take vertices as (m, 2) float arrays of (x, y) pairs in the
y-down screen convention, so a polygon whose signed area is positive winds
clockwise as drawn. Exact intersection is available for convex pairs via
half-plane clipping; anything else falls back to counting raster cells, which
windows the computation to the unit square (generated scenes always live
inside it, so the two routes agree there).
"""

import numpy as np

from polyseq._kernels import raster_iou_counts

RASTER_RESOLUTION = 2048

# signed areas below this are treated as zero (degenerate)
_AREA_EPS = 1e-12


class DegeneratePolygonError(ValueError):
    """Polygon has fewer than 3 effective vertices or zero area."""


class NonConvexClipError(ValueError):
    """Exact clipping was asked to use a non-convex clip region."""


def _as_verts(verts):
    v = np.asarray(verts, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise DegeneratePolygonError(f"expected (m>=3, 2) vertex array, got {v.shape}")
    return v


def shoelace_area(verts):
    """Signed area; positive means clockwise on screen (y grows downward)."""
    v = _as_verts(verts)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_clockwise(verts):
    area = shoelace_area(verts)
    if abs(area) <= _AREA_EPS:
        raise DegeneratePolygonError("zero-area polygon has no orientation")
    return area > 0.0


def centroid(verts):
    """Area centroid; falls back to the vertex mean for zero-area inputs."""
    v = _as_verts(verts)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    if abs(a) <= _AREA_EPS:
        return v.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def canonicalize(verts):
    """Clockwise winding, starting at the (y, x)-lexicographic minimum vertex.

    Every rotation/reflection of the same vertex cycle maps to one canonical
    array, which is what the sequence codec encodes and the tests compare.
    """
    v = _as_verts(verts)
    area = shoelace_area(v)
    if abs(area) <= _AREA_EPS:
        raise DegeneratePolygonError("cannot canonicalize a zero-area polygon")
    if area < 0.0:
        v = v[::-1]
    start = np.lexsort((v[:, 0], v[:, 1]))[0]
    return np.roll(v, -start, axis=0)


def is_convex(verts):
    """True when every turn bends the same way (collinear vertices allowed)."""
    v = _as_verts(verts)
    d = np.roll(v, -1, axis=0) - v
    cross = d[:, 0] * np.roll(d[:, 1], -1) - np.roll(d[:, 0], -1) * d[:, 1]
    pos = np.any(cross > 0)
    neg = np.any(cross < 0)
    if not pos and not neg:
        return False  # fully collinear
    return not (pos and neg)


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _on_segment(px, py, qx, qy, rx, ry):
    # collinear r assumed; is it within the box of p..q
    return (
        min(px, qx) <= rx <= max(px, qx) and min(py, qy) <= ry <= max(py, qy)
    )


def _segments_intersect(p, q, r, s):
    o1 = _cross(p[0], p[1], q[0], q[1], r[0], r[1])
    o2 = _cross(p[0], p[1], q[0], q[1], s[0], s[1])
    o3 = _cross(r[0], r[1], s[0], s[1], p[0], p[1])
    o4 = _cross(r[0], r[1], s[0], s[1], q[0], q[1])
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != 0 and o2 != 0:
        return True
    if o1 == 0 and _on_segment(p[0], p[1], q[0], q[1], r[0], r[1]):
        return True
    if o2 == 0 and _on_segment(p[0], p[1], q[0], q[1], s[0], s[1]):
        return True
    if o3 == 0 and _on_segment(r[0], r[1], s[0], s[1], p[0], p[1]):
        return True
    if o4 == 0 and _on_segment(r[0], r[1], s[0], s[1], q[0], q[1]):
        return True
    return False


def is_simple(verts):
    """True when no two edges cross or touch outside shared endpoints. O(m^2)."""
    v = _as_verts(verts)
    m = v.shape[0]
    edges = [(v[i], v[(i + 1) % m]) for i in range(m)]
    for a, b in edges:
        if a[0] == b[0] and a[1] == b[1]:
            return False  # zero-length edge
    for i in range(m):
        p, q = edges[i]
        # fold-back at the shared vertex of consecutive edges
        r, s = edges[(i + 1) % m]
        dx1, dy1 = q[0] - p[0], q[1] - p[1]
        dx2, dy2 = s[0] - r[0], s[1] - r[1]
        if dx1 * dy2 - dy1 * dx2 == 0 and dx1 * dx2 + dy1 * dy2 < 0:
            return False
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue  # adjacent through the wrap
            if _segments_intersect(p, q, edges[j][0], edges[j][1]):
                return False
    return True


def convex_clip(subject, clip):
    """Intersection of `subject` with a convex `clip` region (half-plane cuts).

    Returns an (k, 2) array, possibly empty. The clip polygon must be convex;
    the subject only has to be simple. Raises NonConvexClipError otherwise.
    """
    clip_v = _as_verts(clip)
    if not is_convex(clip_v):
        raise NonConvexClipError("clip polygon is not convex")
    if not is_clockwise(clip_v):
        clip_v = clip_v[::-1]

    out = list(np.asarray(subject, dtype=np.float64))
    m = clip_v.shape[0]
    for k in range(m):
        if not out:
            break
        ax, ay = clip_v[k]
        bx, by = clip_v[(k + 1) % m]
        inp = out
        out = []
        prev = inp[-1]
        prev_in = _cross(ax, ay, bx, by, prev[0], prev[1]) >= 0.0
        for cur in inp:
            cur_in = _cross(ax, ay, bx, by, cur[0], cur[1]) >= 0.0
            if cur_in != prev_in:
                # edge crosses the clip line; solve for the crossing point
                ex, ey = bx - ax, by - ay
                fx, fy = cur[0] - prev[0], cur[1] - prev[1]
                denom = ex * fy - ey * fx
                t = (ex * (ay - prev[1]) - ey * (ax - prev[0])) / denom
                out.append(np.array([prev[0] + t * fx, prev[1] + t * fy]))
            if cur_in:
                out.append(cur)
            prev, prev_in = cur, cur_in
    if not out:
        return np.empty((0, 2))
    return np.array(out)


def iou(a, b, resolution=RASTER_RESOLUTION):
    """Intersection over union of two simple polygons.

    Convex pairs are computed exactly by clipping; any non-convex operand
    drops to counting filled cells on a resolution x resolution grid.
    """
    a = _as_verts(a)
    b = _as_verts(b)
    if is_convex(a) and is_convex(b):
        inter_poly = convex_clip(a, b)
        inter = abs(shoelace_area(inter_poly)) if inter_poly.shape[0] >= 3 else 0.0
        union = abs(shoelace_area(a)) + abs(shoelace_area(b)) - inter
        return inter / union if union > 0.0 else 0.0
    inter, union = raster_iou_counts(a, b, resolution)
    return inter / union if union > 0 else 0.0


def l1_dist(a, b):
    """Sum of coordinate-wise absolute differences between matching rows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(np.abs(a - b)))
