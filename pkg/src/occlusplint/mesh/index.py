"""Exact proximity queries on triangle meshes.

The index groups triangles into size classes (circumradius about the centroid
within a factor of two) and keeps one KD-tree of centroids per class. A
triangle can only be within distance ``d`` of a query point if its centroid
lies within ``d + R`` of it, where ``R`` is the class's largest bounding
radius, so every query is exact while touching only nearby candidates.
"""

from __future__ import annotations

import os
from itertools import chain
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.spatial import cKDTree

from . import kernels as K

CHUNK = 4096
KNN = 8
MAX_CLASSES = 4


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("OCCLUSPLINT_THREADS", "1")))
    except ValueError:
        return 1


def _map_chunks(fn, n, chunk=CHUNK):
    """Run ``fn(lo, hi)`` over index chunks; results are concatenated in order."""
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    threads = n_threads()
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda b: fn(*b), bounds))
    return [fn(lo, hi) for lo, hi in bounds]


class SpatialIndex:
    def __init__(self, mesh):
        if mesh.is_empty:
            raise ValueError("cannot index an empty mesh")
        self.mesh = mesh
        self.corners = c = mesh.corners
        self.centroids = c.mean(axis=1)
        self.radii = np.linalg.norm(c - self.centroids[:, None, :], axis=2).max(axis=1)
        r = np.maximum(self.radii, 1e-12)
        # octave size classes below the largest triangle; tiny slivers share the lowest class
        cls = np.maximum(np.floor(np.log2(r / r.max())), -MAX_CLASSES + 1).astype(np.int64)
        self.classes = []
        for k in np.unique(cls):
            ids = np.flatnonzero(cls == k)
            self.classes.append((ids, cKDTree(self.centroids[ids]), float(self.radii[ids].max())))
        self._vtree = cKDTree(mesh.vertices)

    # -- candidate generation -------------------------------------------------
    def candidates(self, points, radius):
        """(owner, triangle) pairs whose triangle may lie within ``radius`` of the point."""
        points = np.asarray(points, dtype=np.float64)
        radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), (len(points),))
        owners, tris = [], []
        if len(points) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        for ids, tree, rmax in self.classes:
            hits = tree.query_ball_point(points, radius + rmax, return_sorted=False)
            counts = np.fromiter(map(len, hits), dtype=np.int64, count=len(hits))
            total = int(counts.sum())
            if total == 0:
                continue
            owners.append(np.repeat(np.arange(len(points)), counts))
            tris.append(ids[np.fromiter(chain.from_iterable(hits), dtype=np.int64, count=total)])
        if not owners:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        owner = np.concatenate(owners)
        tri = np.concatenate(tris).astype(np.int64)
        order = np.lexsort((tri, owner))
        return owner[order], tri[order]

    # -- nearest point ------------------------------------------------------------
    def nearest(self, points):
        """Closest surface point per query.

        Returns ``(distance, closest, triangle, feature)``; ties resolve to the
        lowest triangle id so results are independent of chunking.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        parts = _map_chunks(lambda lo, hi: self._nearest_chunk(points[lo:hi]), len(points))
        if not parts:
            return (np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int8))
        return tuple(np.concatenate(x) for x in zip(*parts))

    def _nearest_chunk(self, pts):
        # fast path: the k nearest centroids of each size class settle most
        # queries; a query is certified when no unvisited triangle of any class
        # can come closer than its best hit
        m = len(pts)
        tris, floors = [], []
        for ids, tree, rmax in self.classes:
            k = min(KNN, len(ids))
            dk, ik = tree.query(pts, k=k)
            tris.append(ids[ik.reshape(m, k)])
            floors.append(dk.reshape(m, k)[:, -1] - rmax if k < len(ids) else np.full(m, np.inf))
        # sorted rows make argmin pick the lowest triangle id on ties
        tri = np.sort(np.concatenate(tris, axis=1), axis=1)
        c = self.corners[tri.ravel()]
        rep = np.repeat(pts, tri.shape[1], axis=0)
        qa, fa = K.closest_point_on_triangle(rep, c[:, 0], c[:, 1], c[:, 2])
        da = np.linalg.norm(rep - qa, axis=1).reshape(m, -1)
        j = np.argmin(da, axis=1)
        flat = np.arange(m) * tri.shape[1] + j
        d, q, tri, feat = da[np.arange(m), j], qa[flat], tri[np.arange(m), j], fa[flat]
        floors = np.array(floors)
        todo = np.flatnonzero(~(d < floors.min(axis=0)))
        if len(todo):
            # only classes that failed to certify need a range search; the
            # current best stays a candidate so ties still go to the lowest id
            sub, bound = pts[todo], d[todo] * (1 + 1e-9) + 1e-12
            owners, tris = [np.arange(len(todo))], [tri[todo]]
            for (ids, tree, rmax), fl in zip(self.classes, floors[:, todo]):
                need = np.flatnonzero(~(bound < fl))
                if len(need) == 0:
                    continue
                hits = tree.query_ball_point(sub[need], bound[need] + rmax, return_sorted=False)
                counts = np.fromiter(map(len, hits), dtype=np.int64, count=len(hits))
                owners.append(np.repeat(need, counts))
                tris.append(ids[np.fromiter(chain.from_iterable(hits), dtype=np.int64, count=int(counts.sum()))])
            owner, cand = np.concatenate(owners), np.concatenate(tris).astype(np.int64)
            order = np.lexsort((cand, owner))
            owner, cand = owner[order], cand[order]
            keep = np.ones(len(owner), dtype=bool)
            keep[1:] = (owner[1:] != owner[:-1]) | (cand[1:] != cand[:-1])
            rd, rq, rt, rf = self._closest_among(sub, owner[keep], cand[keep])
            d[todo], q[todo], tri[todo], feat[todo] = rd, rq, rt, rf
        return d, q, tri, feat

    def _nearest_exhaustive(self, pts, bound):
        owner, tri = self.candidates(pts, bound * (1 + 1e-9) + 1e-12)
        return self._closest_among(pts, owner, tri)

    def _closest_among(self, pts, owner, tri):
        c = self.corners[tri]
        q, feat = K.closest_point_on_triangle(pts[owner], c[:, 0], c[:, 1], c[:, 2])
        d = np.linalg.norm(pts[owner] - q, axis=1)
        # per-owner argmin, lowest triangle id on ties (tri is sorted within owner)
        order = np.lexsort((tri, d, owner))
        first = np.ones(len(order), dtype=bool)
        first[1:] = owner[order][1:] != owner[order][:-1]
        pick = order[first]
        return d[pick], q[pick], tri[pick], feat[pick]

    def distance(self, points) -> np.ndarray:
        return self.nearest(points)[0]

    def signed_distance(self, points, return_boundary: bool = False):
        """Signed distance, positive on the outward side (pseudo-normal test).

        With ``return_boundary`` also returns a mask of queries whose closest
        feature lies on an open boundary edge or vertex.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d, q, tri, feat = self.nearest(points)
        n = self._feature_normals(tri, feat)
        s = np.einsum("ij,ij->i", points - q, n)
        signed = np.where(s < 0, -d, d)
        if not return_boundary:
            return signed
        return signed, self._feature_on_boundary(tri, feat)

    def _feature_normals(self, tri, feat):
        m = self.mesh
        out = m.face_normals[tri].copy()
        for code in (K.VERTEX_A, K.VERTEX_B, K.VERTEX_C):
            sel = feat == code
            out[sel] = m.vertex_normals[m.triangles[tri[sel], code]]
        for code, k in ((K.EDGE_AB, 0), (K.EDGE_BC, 1), (K.EDGE_CA, 2)):
            sel = feat == code
            out[sel] = m.edge_normals[m.face_edges[tri[sel], k]]
        return out

    def _feature_on_boundary(self, tri, feat):
        m = self.mesh
        out = np.zeros(len(tri), dtype=bool)
        for code in (K.VERTEX_A, K.VERTEX_B, K.VERTEX_C):
            sel = feat == code
            out[sel] = m.boundary_vertex_mask[m.triangles[tri[sel], code]]
        for code, k in ((K.EDGE_AB, 0), (K.EDGE_BC, 1), (K.EDGE_CA, 2)):
            sel = feat == code
            out[sel] = m.edge_face_counts[m.face_edges[tri[sel], k]] == 1
        return out

    # -- rays ---------------------------------------------------------------------
    def ray_hits(self, origins, directions, max_length: float):
        """All hits of rays within ``max_length``.

        Returns ``(ray, t, triangle, facing)`` sorted by ray then t, where
        ``facing`` is sign(direction . normal) of the hit triangle.
        """
        o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        d = np.broadcast_to(d, o.shape)
        step = max(4.0 * float(np.median(self.radii)), 1e-6)
        nseg = max(1, int(np.ceil(max_length / step)))
        seg = max_length / nseg
        parts = []
        for lo in range(0, len(o), CHUNK):
            oo, dd = o[lo:lo + CHUNK], d[lo:lo + CHUNK]
            mids = (oo[:, None, :] + dd[:, None, :] * (seg * (np.arange(nseg) + 0.5))[None, :, None]).reshape(-1, 3)
            owner, tri = self.candidates(mids, np.full(len(mids), seg / 2))
            owner //= nseg
            key = np.unique(owner * len(self.mesh.triangles) + tri)
            owner, tri = np.divmod(key, len(self.mesh.triangles))
            c = self.corners[tri]
            t, facing = K.ray_triangle_hits(oo[owner], dd[owner], c[:, 0], c[:, 1], c[:, 2])
            ok = (t >= 0) & (t <= max_length)
            parts.append((owner[ok] + lo, t[ok], tri[ok], facing[ok]))
        ray = np.concatenate([p[0] for p in parts])
        t = np.concatenate([p[1] for p in parts])
        tri = np.concatenate([p[2] for p in parts])
        facing = np.concatenate([p[3] for p in parts])
        order = np.lexsort((tri, t, ray))
        return ray[order], t[order], tri[order], facing[order]


def count_crossings(ray, t, n_rays, merge_tol: float = 1e-9):
    """Number of distinct surface crossings per ray (hits at equal t merge, e.g. on shared edges)."""
    if len(ray) == 0:
        return np.zeros(n_rays, dtype=np.int64)
    new = np.ones(len(ray), dtype=bool)
    new[1:] = (ray[1:] != ray[:-1]) | (np.abs(t[1:] - t[:-1]) > merge_tol)
    return np.bincount(ray[new], minlength=n_rays)
