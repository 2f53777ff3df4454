"""Vectorized point/segment/triangle primitives.

All functions broadcast over a leading batch axis and work in float64.
"""

from __future__ import annotations

import numpy as np

# Feature codes returned by ``closest_point_on_triangle``: 0-2 vertex a/b/c,
# 3-5 edge ab/bc/ca, 6 face interior.
VERTEX_A, VERTEX_B, VERTEX_C, EDGE_AB, EDGE_BC, EDGE_CA, FACE = range(7)


def _dot(u, v):
    return np.einsum("...i,...i->...", u, v)


def closest_point_on_triangle(p, a, b, c):
    """Closest points on triangles ``abc`` to points ``p`` (Ericson, RTCD 5.1.5).

    Returns ``(points, feature)`` where ``feature`` holds the Voronoi region code.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    shape = p.shape[:-1]
    out = np.empty(p.shape)
    feat = np.full(shape, -1, dtype=np.int8)
    todo = np.ones(shape, dtype=bool)

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    m = todo & (d1 <= 0) & (d2 <= 0)
    out[m] = a[m]
    feat[m] = VERTEX_A
    todo &= ~m

    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    m = todo & (d3 >= 0) & (d4 <= d3)
    out[m] = b[m]
    feat[m] = VERTEX_B
    todo &= ~m

    vc = d1 * d4 - d3 * d2
    m = todo & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
    out[m] = a[m] + v[m, None] * ab[m]
    feat[m] = EDGE_AB
    todo &= ~m

    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    m = todo & (d6 >= 0) & (d5 <= d6)
    out[m] = c[m]
    feat[m] = VERTEX_C
    todo &= ~m

    vb = d5 * d2 - d1 * d6
    m = todo & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = d2 / (d2 - d6)
    out[m] = a[m] + w[m, None] * ac[m]
    feat[m] = EDGE_CA
    todo &= ~m

    va = d3 * d6 - d5 * d4
    m = todo & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    out[m] = b[m] + w[m, None] * (c[m] - b[m])
    feat[m] = EDGE_BC
    todo &= ~m

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
    m = todo
    out[m] = a[m] + ab[m] * v[m, None] + ac[m] * w[m, None]
    feat[m] = FACE
    return out, feat


def point_triangle_distance(p, a, b, c):
    q, _ = closest_point_on_triangle(p, a, b, c)
    return np.linalg.norm(np.asarray(p) - q, axis=-1)


def segment_segment_distance(p1, q1, p2, q2):
    """Minimum distance between segments ``p1q1`` and ``p2q2`` (Ericson 5.1.9)."""
    p1, q1, p2, q2 = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p1, q1, p2, q2)))
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    eps = 1e-300
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-14 * a * e, np.clip((b * f - c * e) / denom, 0.0, 1.0), 0.0)
        t = (b * s + f) / np.maximum(e, eps)
        s = np.where(t < 0.0, np.clip(-c / np.maximum(a, eps), 0.0, 1.0), s)
        s = np.where(t > 1.0, np.clip((b - c) / np.maximum(a, eps), 0.0, 1.0), s)
        t = np.clip(t, 0.0, 1.0)
    s = np.where(a <= eps, 0.0, s)
    t = np.where(e <= eps, 0.0, t)
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def segment_triangle_intersects(p, q, a, b, c):
    """True where segment ``pq`` crosses triangle ``abc`` (non-coplanar case).

    Coplanar contacts are not reported here; callers combine this with the
    vertex/edge distance terms, which are zero for every coplanar overlap.
    """
    p, q, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, q, a, b, c)))
    n = np.cross(b - a, c - a)
    dp = _dot(p - a, n)
    dq = _dot(q - a, n)
    straddle = (dp * dq <= 0) & (dp != dq)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(straddle, dp / (dp - dq), 0.0)
    x = p + t[..., None] * (q - p)
    s0 = _dot(np.cross(b - a, x - a), n)
    s1 = _dot(np.cross(c - b, x - b), n)
    s2 = _dot(np.cross(a - c, x - c), n)
    inside = ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))
    return straddle & inside


def triangle_triangle_distance(a0, a1, a2, b0, b1, b2):
    """Exact minimum distance between triangle pairs (0 where they touch or cross)."""
    ta = (a0, a1, a2)
    tb = (b0, b1, b2)
    edges_a = ((a0, a1), (a1, a2), (a2, a0))
    edges_b = ((b0, b1), (b1, b2), (b2, b0))
    crossing = np.zeros(np.broadcast(a0, b0).shape[:-1], dtype=bool)
    for p, q in edges_a:
        crossing |= segment_triangle_intersects(p, q, *tb)
    for p, q in edges_b:
        crossing |= segment_triangle_intersects(p, q, *ta)
    best = np.full(crossing.shape, np.inf)
    for v in ta:
        best = np.minimum(best, point_triangle_distance(v, *tb))
    for v in tb:
        best = np.minimum(best, point_triangle_distance(v, *ta))
    for p1, q1 in edges_a:
        for p2, q2 in edges_b:
            best = np.minimum(best, segment_segment_distance(p1, q1, p2, q2))
    return np.where(crossing, 0.0, best)


def ray_triangle_hits(origins, directions, a, b, c, eps: float = 1e-12):
    """Moller-Trumbore. Returns ray parameter t (inf on miss) and sign(dot(direction, face normal))."""
    o, d, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (origins, directions, a, b, c)))
    e1 = b - a
    e2 = c - a
    h = np.cross(d, e2)
    det = _dot(e1, h)
    ok = np.abs(det) > eps
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = o - a
        u = inv * _dot(s, h)
        qv = np.cross(s, e1)
        v = inv * _dot(d, qv)
        t = inv * _dot(e2, qv)
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1)
    t = np.where(hit, t, np.inf)
    return t, -np.sign(det)
