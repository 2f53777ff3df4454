"""Column grids along the insertion axis.

Every surface the builder manipulates is single-valued along the insertion
axis once undercuts are filled, so it is stored as one height per column of a
regular grid in the cutting-plane frame. Offsets become grayscale ball
erosions, carves become column-wise max/min, and the final solid is contoured
with marching cubes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.measure import marching_cubes

from ..mesh import Plane, TriangleMesh
from ..mesh.shapes import grid_surface


@dataclass(frozen=True)
class HeightGrid:
    """Columns at ``origin + (i, j) * spacing`` in the frame ``(u, v, n)`` of a plane."""

    frame: np.ndarray = field(repr=False)   # rows u, v, n
    origin: tuple
    spacing: float
    shape: tuple

    @classmethod
    def covering(cls, plane: Plane, points_world, spacing: float, pad: float) -> "HeightGrid":
        frame = plane.basis()
        loc = np.asarray(points_world) @ frame.T
        lo = np.floor((loc[:, :2].min(axis=0) - pad) / spacing) * spacing
        hi = np.ceil((loc[:, :2].max(axis=0) + pad) / spacing) * spacing
        shape = tuple(int(x) for x in np.rint((hi - lo) / spacing).astype(int) + 1)
        return cls(frame, (float(lo[0]), float(lo[1])), float(spacing), shape)

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.spacing * np.arange(self.shape[0])

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.spacing * np.arange(self.shape[1])

    def to_local(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.frame.T

    def to_world(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.frame

    def column_of(self, points_world) -> tuple[np.ndarray, np.ndarray]:
        loc = self.to_local(points_world)
        i = np.rint((loc[:, 0] - self.origin[0]) / self.spacing).astype(np.int64)
        j = np.rint((loc[:, 1] - self.origin[1]) / self.spacing).astype(np.int64)
        return i, j

    def surface_mesh(self, values, mask=None, facing: int = 1) -> TriangleMesh:
        """Triangulated graph of ``values`` over ``mask``; normals along ``facing * n``."""
        ok = np.isfinite(values) if mask is None else (mask & np.isfinite(values))
        if not ok.any():
            return TriangleMesh.empty()
        z = np.where(ok, values, 0.0)
        local = grid_surface(self.x, self.y, z, mask=ok, flip=facing < 0)
        if local.is_empty:
            return local
        return local.with_vertices(self.to_world(local.vertices))


def rasterize(mesh: TriangleMesh, grid: HeightGrid, mode: str = "min", chunk: int = 200_000) -> np.ndarray:
    """Extreme height of ``mesh`` along each column centre (``±inf`` where no triangle).

    Heights are exact: each column centre is located inside the projected
    triangles and interpolated barycentrically.
    """
    if mode not in ("min", "max"):
        raise ValueError("mode must be 'min' or 'max'")
    nx, ny = grid.shape
    fill = np.inf if mode == "min" else -np.inf
    out = np.full(nx * ny, fill)
    if mesh.is_empty:
        return out.reshape(nx, ny)
    c = grid.to_local(mesh.vertices)[mesh.triangles]
    a, b, cc = c[:, 0], c[:, 1], c[:, 2]
    det = (b[:, 0] - a[:, 0]) * (cc[:, 1] - a[:, 1]) - (cc[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    lo = c[:, :, :2].min(axis=1)
    hi = c[:, :, :2].max(axis=1)
    h = grid.spacing
    i0 = np.maximum(np.ceil((lo[:, 0] - grid.origin[0]) / h - 1e-9).astype(np.int64), 0)
    i1 = np.minimum(np.floor((hi[:, 0] - grid.origin[0]) / h + 1e-9).astype(np.int64), nx - 1)
    j0 = np.maximum(np.ceil((lo[:, 1] - grid.origin[1]) / h - 1e-9).astype(np.int64), 0)
    j1 = np.minimum(np.floor((hi[:, 1] - grid.origin[1]) / h + 1e-9).astype(np.int64), ny - 1)
    ni = np.maximum(i1 - i0 + 1, 0)
    nj = np.maximum(j1 - j0 + 1, 0)
    live = np.flatnonzero((ni > 0) & (nj > 0) & (np.abs(det) > 1e-14))
    counts = (ni * nj)[live]
    reduce = np.minimum if mode == "min" else np.maximum
    # process triangles in batches with a bounded number of (triangle, column) pairs
    ends = np.searchsorted(np.cumsum(counts), np.arange(chunk, counts.sum() + chunk, chunk), side="right")
    start = 0
    for end in np.unique(np.append(ends, len(live))):
        if end <= start:
            continue
        t = live[start:end]
        cnt = counts[start:end]
        start = end
        tr = np.repeat(t, cnt)
        k = np.arange(len(tr)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        ii = i0[tr] + k // nj[tr]
        jj = j0[tr] + k % nj[tr]
        px = grid.origin[0] + ii * h
        py = grid.origin[1] + jj * h
        ax, ay = a[tr, 0], a[tr, 1]
        d = det[tr]
        l1 = ((px - ax) * (cc[tr, 1] - ay) - (cc[tr, 0] - ax) * (py - ay)) / d
        l2 = ((b[tr, 0] - ax) * (py - ay) - (px - ax) * (b[tr, 1] - ay)) / d
        l0 = 1.0 - l1 - l2
        eps = -1e-12
        inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
        z = l0 * a[tr, 2] + l1 * b[tr, 2] + l2 * cc[tr, 2]
        flat = (ii * ny + jj)[inside]
        reduce.at(out, flat, z[inside])
    return out.reshape(nx, ny)


def disk_offsets(radius: float, spacing: float):
    """Integer offsets within ``radius`` and the ball height ``sqrt(R^2 - d^2)`` at each."""
    n = int(np.floor(radius / spacing + 1e-9))
    di, dj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    d2 = (di * spacing) ** 2 + (dj * spacing) ** 2
    ok = d2 <= radius ** 2 + 1e-12
    return di[ok], dj[ok], np.sqrt(np.maximum(radius ** 2 - d2[ok], 0.0))


def ball_offset_down(values: np.ndarray, radius: float, spacing: float) -> np.ndarray:
    """Lower envelope of balls of ``radius`` rolled under the graph of ``values``.

    ``out(p) = min_{|q - p| <= R} values(q) - sqrt(R^2 - |q - p|^2)``, i.e. the
    graph offset by ``R`` away from the solid lying above it.
    """
    if radius == 0:
        return values.copy()
    di, dj, cap = disk_offsets(radius, spacing)
    n = int(max(np.abs(di).max(), np.abs(dj).max()))
    nx, ny = values.shape
    padded = np.full((nx + 2 * n, ny + 2 * n), np.inf)
    padded[n:n + nx, n:n + ny] = values
    out = np.full_like(values, np.inf)
    for a, b, s in zip(di, dj, cap):
        np.minimum(out, padded[n + a:n + a + nx, n + b:n + b + ny] - s, out=out)
    return out


def ball_offset_up(values: np.ndarray, radius: float, spacing: float) -> np.ndarray:
    """Mirror of :func:`ball_offset_down` for a solid lying below the graph."""
    return -ball_offset_down(-values, radius, spacing)


def contour_solid(grid: HeightGrid, bottom: np.ndarray, top: np.ndarray, z_top: float) -> TriangleMesh:
    """Marching-cubes surface of ``{bottom < z < top}`` per column.

    Sample levels sit half a cell below/above ``z_top`` so no level coincides
    with the flat cut face.
    """
    h = grid.spacing
    present = np.isfinite(bottom) & np.isfinite(top) & (bottom < top)
    if not present.any():
        return TriangleMesh.empty()
    ii, jj = np.nonzero(present)
    i_lo, i_hi = ii.min() - 2, ii.max() + 2
    j_lo, j_hi = jj.min() - 2, jj.max() + 2
    nx, ny = grid.shape
    sub = np.zeros((i_hi - i_lo + 1, j_hi - j_lo + 1), dtype=bool)
    bsub = np.full(sub.shape, np.inf)
    tsub = np.full(sub.shape, -np.inf)
    si = slice(max(i_lo, 0), min(i_hi, nx - 1) + 1)
    sj = slice(max(j_lo, 0), min(j_hi, ny - 1) + 1)
    oi, oj = si.start - i_lo, sj.start - j_lo
    view = (slice(oi, oi + si.stop - si.start), slice(oj, oj + sj.stop - sj.start))
    sub[view] = present[si, sj]
    bsub[view] = np.where(present[si, sj], bottom[si, sj], np.inf)
    tsub[view] = np.where(present[si, sj], top[si, sj], -np.inf)

    z_hi = z_top + 1.5 * h
    z_lo = float(bsub[sub].min()) - 1.5 * h
    nz = int(np.ceil((z_hi - z_lo) / h)) + 1
    z = z_hi - h * np.arange(nz)[::-1]
    field = np.maximum(bsub[:, :, None] - z[None, None, :], z[None, None, :] - tsub[:, :, None])
    field = np.where(sub[:, :, None], field, h)
    field = np.minimum(field, 4 * h)
    field[field == 0] = 1e-9 * h
    verts, faces, _, _ = marching_cubes(field.astype(np.float64), level=0.0, spacing=(h, h, h),
                                        gradient_direction="ascent", allow_degenerate=False)
    local = np.column_stack([
        grid.origin[0] + (i_lo * h) + verts[:, 0],
        grid.origin[1] + (j_lo * h) + verts[:, 1],
        z[0] + verts[:, 2],
    ])
    mesh = TriangleMesh(grid.to_world(local), faces)
    if mesh.volume < 0:
        mesh = mesh.flipped()
    return mesh
