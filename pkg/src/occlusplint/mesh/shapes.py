"""Small parametric meshes used by the synthetic generators and tests."""

from __future__ import annotations

import numpy as np

from .core import TriangleMesh, merge_vertices


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.float64)
    v = lo + v * (hi - lo)
    f = np.array([
        [0, 2, 1], [1, 2, 3],  # z = lo
        [4, 5, 6], [5, 7, 6],  # z = hi
        [0, 1, 4], [1, 5, 4],  # y = lo
        [2, 6, 3], [3, 6, 7],  # y = hi
        [0, 4, 2], [2, 4, 6],  # x = lo
        [1, 3, 5], [3, 7, 5],  # x = hi
    ])
    return TriangleMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(subdivisions):
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = inv.reshape(3, -1).T + len(v)
        v = np.vstack([v, mids])
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1),
        ])
    return TriangleMesh(v * radius + np.asarray(center, dtype=np.float64), f)


def grid_surface(x, y, z, mask=None, flip: bool = False) -> TriangleMesh:
    """Triangulate a height field ``z[i, j]`` sampled at ``(x[i], y[j])``.

    Cells are split along a fixed diagonal; ``mask`` (same shape as ``z``)
    keeps only cells whose four corners are selected. Normals face +z unless
    ``flip``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    nx, ny = z.shape
    X, Y = np.meshgrid(x, y, indexing="ij")
    v = np.stack([X.ravel(), Y.ravel(), z.ravel()], axis=1)
    idx = np.arange(nx * ny).reshape(nx, ny)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    keep = np.ones(len(a), dtype=bool)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        keep = mask[:-1, :-1].ravel() & mask[1:, :-1].ravel() & mask[1:, 1:].ravel() & mask[:-1, 1:].ravel()
    a, b, c, d = a[keep], b[keep], c[keep], d[keep]
    f = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    if flip:
        f = f[:, ::-1]
    used, inv = np.unique(f, return_inverse=True)
    return TriangleMesh(v[used], inv.reshape(-1, 3))


def plate(size=(4.0, 4.0), thickness: float = 1.0, resolution: float = 0.25, z0: float = 0.0) -> TriangleMesh:
    """Closed rectangular slab ``[-sx/2, sx/2] x [-sy/2, sy/2] x [z0, z0 + thickness]``."""
    sx, sy = size
    nx = max(1, int(round(sx / resolution)))
    ny = max(1, int(round(sy / resolution)))
    x = np.linspace(-sx / 2, sx / 2, nx + 1)
    y = np.linspace(-sy / 2, sy / 2, ny + 1)
    top = grid_surface(x, y, np.full((nx + 1, ny + 1), z0 + thickness))
    bot = grid_surface(x, y, np.full((nx + 1, ny + 1), z0), flip=True)
    return close_between(top, bot)


def close_between(top: TriangleMesh, bottom: TriangleMesh) -> TriangleMesh:
    """Join two open patches with matching boundary vertex order (as produced by
    ``grid_surface`` on the same grid) into one closed mesh via side walls."""
    from .ops import boundary_loops

    v = np.vstack([top.vertices, bottom.vertices])
    off = len(top.vertices)
    faces = [top.triangles, bottom.triangles + off]
    for loop in boundary_loops(top):
        a = loop
        b = np.roll(loop, -1)
        # the bottom patch shares (x, y) ordering with the top patch
        faces.append(np.stack([b, a, a + off], 1))
        faces.append(np.stack([b, a + off, b + off], 1))
    v, f = merge_vertices(v, np.concatenate(faces), tol=1e-9)
    return TriangleMesh(v, f)
