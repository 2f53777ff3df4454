"""Indexed triangle meshes and planes."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .transform import RigidTransform

log = logging.getLogger(__name__)

MERGE_TOL = 1e-6
DEGENERATE_AREA = 1e-10


class MeshError(ValueError):
    pass


class TriangleMesh:
    """Immutable indexed triangle surface (mm).

    Derived quantities (normals, edges, spatial index) are computed lazily and
    cached; the arrays are read-only so instances can be shared across threads.
    """

    def __init__(self, vertices, triangles, *, clean: bool = False):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        self.dropped_degenerate = 0
        if clean:
            v, f, self.dropped_degenerate = _cleanup(v, f)
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.triangles = f

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def __len__(self):
        return len(self.triangles)

    def __repr__(self):
        return f"TriangleMesh(vertices={len(self.vertices)}, triangles={len(self.triangles)})"

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    @property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    @cached_property
    def face_normals_raw(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals_raw, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self.face_normals_raw
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Angle-weighted unit vertex normals (pseudo-normals)."""
        c = self.corners
        fn = self.face_normals
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            e1 = c[:, (k + 1) % 3] - c[:, k]
            e2 = c[:, (k + 2) % 3] - c[:, k]
            cosang = np.einsum("ij,ij->i", e1, e2) / np.maximum(
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1), 1e-300)
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(acc, self.triangles[:, k], fn * ang[:, None])
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    @cached_property
    def _edge_data(self):
        f = self.triangles
        half = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1).reshape(-1, 2)
        key = np.sort(half, axis=1)
        edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        return half, edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (E, 2)."""
        return self._edge_data[1]

    @property
    def face_edges(self) -> np.ndarray:
        """(F, 3) edge ids for edges ab, bc, ca of every triangle."""
        return self._edge_data[2]

    @property
    def edge_face_counts(self) -> np.ndarray:
        return self._edge_data[3]

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit pseudo-normals of edges: normalized sum of incident face normals."""
        acc = np.zeros((len(self.edges), 3))
        for k in range(3):
            np.add.at(acc, self.face_edges[:, k], self.face_normals)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self.edge_face_counts == 1]

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        m = np.zeros(len(self.vertices), dtype=bool)
        m[self.boundary_edges.ravel()] = True
        return m

    @property
    def is_watertight(self) -> bool:
        """Every edge shared by exactly two triangles with opposite orientation."""
        if self.is_empty:
            return False
        half, _, inverse, counts = self._edge_data
        if np.any(counts != 2):
            return False
        # consistent winding: each directed half-edge must be unique
        directed = np.unique(half, axis=0)
        return len(directed) == len(half)

    @property
    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        return int(len(used) - len(self.edges) + len(self.triangles))

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def volume(self) -> float:
        """Signed enclosed volume (positive for outward-oriented closed meshes)."""
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @property
    def centroid(self) -> np.ndarray:
        """Area-weighted surface centroid."""
        c = self.corners.mean(axis=1)
        w = self.face_areas
        return (c * w[:, None]).sum(axis=0) / w.sum()

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @cached_property
    def index(self):
        from .index import SpatialIndex

        return SpatialIndex(self)

    def transformed(self, transform: RigidTransform) -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.triangles)

    def submesh(self, face_mask) -> "TriangleMesh":
        """Mesh restricted to the selected triangles, with unused vertices dropped."""
        face_mask = np.asarray(face_mask)
        faces = self.triangles[face_mask]
        used, inv = np.unique(faces, return_inverse=True)
        return TriangleMesh(self.vertices[used], inv.reshape(-1, 3))

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[:, ::-1])

    def with_vertices(self, vertices) -> "TriangleMesh":
        return TriangleMesh(vertices, self.triangles)

    def face_adjacency_components(self) -> tuple[int, np.ndarray]:
        """Label triangles by edge connectivity."""
        n = len(self.triangles)
        if n == 0:
            return 0, np.zeros(0, dtype=np.int64)
        fe = self.face_edges.ravel()
        faces = np.repeat(np.arange(n), 3)
        order = np.argsort(fe, kind="stable")
        fe_s, faces_s = fe[order], faces[order]
        same = fe_s[1:] == fe_s[:-1]
        rows = faces_s[:-1][same]
        cols = faces_s[1:][same]
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return _cc(g, directed=False)


def concatenate(meshes) -> TriangleMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.triangles + off)
        off += len(m.vertices)
    if not verts:
        return TriangleMesh.empty()
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def merge_vertices(vertices, triangles, tol: float = MERGE_TOL):
    """Weld vertices closer than ``tol``; returns new arrays (first occurrence kept)."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(triangles, dtype=np.int64)
    if len(v) == 0:
        return v, f
    pairs = cKDTree(v).query_pairs(tol, output_type="ndarray")
    if len(pairs):
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(v), len(v)))
        _, labels = _cc(g, directed=False)
    else:
        labels = np.arange(len(v))
    # representative = first vertex of each group, in original order
    _, first, remap = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    new_v = v[first[order]]
    new_f = rank[remap.reshape(-1)][f]
    return new_v, new_f


def _cleanup(v, f):
    v, f = merge_vertices(v, f)
    repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])
    c = v[f]
    area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
    bad = repeated | (area < DEGENERATE_AREA)
    dropped = int(bad.sum())
    if dropped:
        log.info("dropped %d degenerate triangles", dropped)
    f = f[~bad]
    used, inv = np.unique(f, return_inverse=True)
    return v[used], inv.reshape(-1, 3), dropped


@dataclass(frozen=True)
class Plane:
    """Oriented plane ``{x : normal . x = offset}``."""

    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if n.shape != (3,) or not np.isfinite(norm) or norm == 0:
            raise ValueError("plane normal must be a non-zero 3-vector")
        object.__setattr__(self, "normal", tuple(float(x) for x in n / norm))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(tuple(n), float(n @ np.asarray(point, dtype=np.float64)))

    @property
    def n(self) -> np.ndarray:
        return np.array(self.normal)

    @property
    def origin(self) -> np.ndarray:
        return self.n * self.offset

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.n - self.offset

    def transformed(self, transform: RigidTransform) -> "Plane":
        return Plane.from_point_normal(transform.apply(self.origin), transform.apply_vectors(self.n))

    def basis(self) -> np.ndarray:
        """Deterministic right-handed frame (u, v, n) as rows."""
        n = self.n
        ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = ref - (ref @ n) * n
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return np.stack([u, v, n])
