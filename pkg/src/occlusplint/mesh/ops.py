"""Mesh-level operations: transforms, distances, sections, intersections, components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .core import MeshError, Plane, TriangleMesh
from .transform import RigidTransform


def apply_transform(mesh: TriangleMesh, transform: RigidTransform) -> TriangleMesh:
    return mesh.transformed(transform)


def signed_distance(points, mesh: TriangleMesh) -> np.ndarray:
    """Signed point-to-surface distance; positive on the outward-normal side."""
    if mesh.is_empty:
        raise MeshError("signed distance against an empty mesh")
    pts = np.asarray(points, dtype=np.float64)
    out = mesh.index.signed_distance(pts.reshape(-1, 3))
    return out.reshape(pts.shape[:-1]) if pts.ndim > 1 else out[0]


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    closed: bool

    @property
    def length(self) -> float:
        p = self.points
        if self.closed:
            p = np.vstack([p, p[:1]])
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def plane_section(mesh: TriangleMesh, plane: Plane) -> list[Polyline]:
    """Intersection polylines of ``mesh`` with ``plane``.

    Vertices lying exactly on the plane are treated as being on its positive
    side (symbolic perturbation), so every crossing edge yields one point and
    each crossed triangle one segment.
    """
    if mesh.is_empty:
        return []
    d = plane.signed_distance(mesh.vertices)
    pos = d >= 0
    edges = mesh.edges
    cross = pos[edges[:, 0]] != pos[edges[:, 1]]
    if not cross.any():
        return []
    e = edges[cross]
    da, db = d[e[:, 0]], d[e[:, 1]]
    t = da / (da - db)
    pts = mesh.vertices[e[:, 0]] + t[:, None] * (mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]])
    # project residual rounding back onto the plane
    pts -= plane.signed_distance(pts)[:, None] * plane.n
    node = np.full(len(edges), -1, dtype=np.int64)
    node[cross] = np.arange(cross.sum())
    fe = node[mesh.face_edges]
    hit = (fe >= 0).sum(axis=1) == 2
    seg = np.sort(fe[hit], axis=1)[:, 1:]
    return _chain(seg, pts)


def _chain(segments: np.ndarray, pts: np.ndarray) -> list[Polyline]:
    n = len(pts)
    adj = [[] for _ in range(n)]
    for a, b in segments.tolist():
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(n, dtype=bool)
    out = []
    # open chains first (start at degree-1 nodes), then loops; lowest ids first
    starts = [i for i in range(n) if len(adj[i]) == 1] + list(range(n))
    for s in starts:
        if seen[s] or not adj[s]:
            continue
        chain = [s]
        seen[s] = True
        prev, cur = -1, s
        closed = False
        while True:
            nxt = [x for x in adj[cur] if x != prev and not seen[x]]
            if not nxt:
                closed = len(chain) > 2 and s in adj[cur]
                break
            prev, cur = cur, min(nxt)
            chain.append(cur)
            seen[cur] = True
        out.append(Polyline(pts[chain], closed))
    return out


@dataclass(frozen=True)
class IntersectionResult:
    intersects: bool
    pairs: np.ndarray  # (k, 2) triangle ids (a, b)
    distances: np.ndarray

    def __bool__(self):
        return self.intersects


def triangle_pairs_within(a: TriangleMesh, b: TriangleMesh, tolerance: float, chunk: int = 20000):
    """All triangle pairs whose exact separation is ``<= tolerance``."""
    ia = a.index
    ib = b.index
    out_pairs, out_d = [], []
    for lo in range(0, len(a.triangles), chunk):
        ids = np.arange(lo, min(lo + chunk, len(a.triangles)))
        owner, tb = ib.candidates(ia.centroids[ids], ia.radii[ids] + tolerance)
        if len(owner) == 0:
            continue
        ta = ids[owner]
        for s in range(0, len(ta), 200000):
            xa = a.corners[ta[s:s + 200000]]
            xb = b.corners[tb[s:s + 200000]]
            d = K.triangle_triangle_distance(xa[:, 0], xa[:, 1], xa[:, 2], xb[:, 0], xb[:, 1], xb[:, 2])
            ok = d <= tolerance
            out_pairs.append(np.stack([ta[s:s + 200000][ok], tb[s:s + 200000][ok]], axis=1))
            out_d.append(d[ok])
    if not out_pairs:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    return np.concatenate(out_pairs), np.concatenate(out_d)


def meshes_intersect(a: TriangleMesh, b: TriangleMesh, tolerance: float = 0.0) -> IntersectionResult:
    """True iff some triangle of ``a`` comes within ``tolerance`` of one of ``b``.

    Touching (distance exactly zero) counts as intersecting.
    """
    if a.is_empty or b.is_empty:
        raise MeshError("meshes_intersect needs two non-empty meshes")
    pairs, d = triangle_pairs_within(a, b, tolerance)
    return IntersectionResult(bool(len(pairs)), pairs, d)


def min_distance(a: TriangleMesh, b: TriangleMesh) -> float:
    """Exact minimum separation between two meshes (0 if they touch or cross)."""
    # closest vertex pair gives an upper bound; the exact pass only looks below it
    bound = float(b.index._vtree.query(a.vertices)[0].min())
    if bound == 0.0:
        return 0.0
    pairs, d = triangle_pairs_within(a, b, bound)
    return float(min(bound, d.min())) if len(d) else bound


def connected_components(mesh: TriangleMesh) -> list[TriangleMesh]:
    """Split by edge connectivity; ordered by first triangle index."""
    n, labels = mesh.face_adjacency_components()
    if n == 0:
        return []
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    return [mesh.submesh(labels == k) for k in order]


def component_labels(mesh: TriangleMesh) -> np.ndarray:
    """Per-triangle component labels numbered by first appearance."""
    n, labels = mesh.face_adjacency_components()
    if n == 0:
        return labels
    _, first = np.unique(labels, return_index=True)
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(n)
    return rank[labels]


def boundary_loops(mesh: TriangleMesh) -> list[np.ndarray]:
    """Vertex-index loops along open boundary edges, oriented as in their triangles."""
    half = np.stack([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]], axis=1)
    half = half.reshape(-1, 2)
    fe = mesh.face_edges.ravel()
    on_boundary = mesh.edge_face_counts[fe] == 1
    bh = half[on_boundary]
    nxt = {}
    for a, b in bh.tolist():
        nxt.setdefault(a, []).append(b)
    loops, used = [], set()
    for start in sorted(nxt):
        for first in nxt[start]:
            if (start, first) in used:
                continue
            loop = [start]
            used.add((start, first))
            cur = first
            while cur != start:
                loop.append(cur)
                cands = [x for x in nxt.get(cur, []) if (cur, x) not in used]
                if not cands:
                    break
                used.add((cur, cands[0]))
                cur = cands[0]
            loops.append(np.array(loop, dtype=np.int64))
    return loops
