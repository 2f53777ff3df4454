"""Splint construction: offsets, virtual impression, embossing, apertures, assembly.

All geometry lives on a column grid in the cutting-plane frame (see
``heightfield``). Local ``z`` grows along the insertion axis, towards the
maxilla; the splint occupies ``bottom < z < top`` in every column, with
``top`` the clearance-offset crown impression clipped at the cutting plane and
``bottom`` the outer (occlusal) surface.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from skimage.measure import find_contours
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..mesh import Plane, RigidTransform, TriangleMesh, meshes_intersect
from ..mesh.ops import component_labels
from .feasibility import check_feasibility
from .heightfield import HeightGrid, ball_offset_down, contour_solid, rasterize
from .model import (DesignCase, InfeasibleTransformError, SplintError, SplintModel, SplintParams,
                    mesh_digest)
from .stamp import OcclusalStamp, clean_stamp, make_stamp

log = logging.getLogger(__name__)

INNER = 1
OUTER = -1


@dataclass(frozen=True)
class HeightSurface:
    """One height per grid column; ``±inf`` marks columns without surface."""

    grid: HeightGrid
    values: np.ndarray = field(repr=False)
    facing: int
    z_cut: float
    base: np.ndarray | None = field(default=None, repr=False)
    footprint: np.ndarray | None = field(default=None, repr=False)
    apertures: np.ndarray | None = field(default=None, repr=False)

    @property
    def present(self) -> np.ndarray:
        ok = np.isfinite(self.values) & (self.values < self.z_cut)
        if self.apertures is not None:
            ok &= ~self.apertures
        return ok

    @property
    def mesh(self) -> TriangleMesh:
        return self.grid.surface_mesh(self.values, self.present, self.facing)


def _plane_for(params: SplintParams, fallback: Plane | None, mesh: TriangleMesh) -> Plane:
    if params.cutting_plane is not None:
        return params.cutting_plane
    if fallback is not None:
        return fallback
    return Plane((0.0, 0.0, 1.0), float(mesh.vertices[:, 2].max()))


def crown_region(maxilla: TriangleMesh, params: SplintParams, mask=None) -> TriangleMesh:
    """Explicit mask, or every triangle reaching within ``c + w`` above the cut."""
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    else:
        plane = _plane_for(params, None, maxilla)
        z = plane.signed_distance(maxilla.vertices)[maxilla.triangles].min(axis=1)
        mask = z < -params.cutting_depth + params.clearance + params.wall_thickness
    if not mask.any():
        raise SplintError("build_inner_surface", "empty crown selection")
    return maxilla.submesh(mask)


# -- surfaces -----------------------------------------------------------------------

def build_inner_surface(crown: TriangleMesh, params: SplintParams, grid: HeightGrid | None = None) -> HeightSurface:
    """Clearance offset of the crown followed by the virtual impression.

    The lowest crown point of each column fills everything above it (undercut
    removal along the insertion axis); the clearance offset is a ball of
    radius ``c`` rolled under that envelope.
    """
    if crown is None or crown.is_empty:
        raise SplintError("build_inner_surface", "empty crown selection")
    plane = _plane_for(params, None, crown)
    r = params.resolution
    if grid is None:
        pad = params.clearance + params.wall_thickness + 4 * r
        grid = HeightGrid.covering(plane, crown.vertices, r, pad)
    z_cut = plane.offset - params.cutting_depth
    envelope = rasterize(crown, grid, "min")
    if not np.isfinite(envelope).any():
        raise SplintError("build_inner_surface", "crown selection projects to no grid column")
    inner = ball_offset_down(envelope, params.clearance, r)
    if not (inner < z_cut).any():
        raise SplintError("build_inner_surface",
                          "offset crown lies entirely beyond the cutting plane; clearance too large "
                          "or cutting depth too deep")
    return HeightSurface(grid, inner, INNER, z_cut)


def build_outer_shell(inner: HeightSurface, params: SplintParams) -> HeightSurface:
    """Minimum-thickness boundary: the inner surface offset by ``w`` away from the crown."""
    outer = ball_offset_down(inner.values, params.wall_thickness, inner.grid.spacing)
    return HeightSurface(inner.grid, outer, OUTER, inner.z_cut, base=outer.copy())


def _check_direction(grid: HeightGrid, direction, stage: str):
    if abs(float(np.dot(grid.frame[2], direction)) - 1.0) > 1e-9:
        raise SplintError(stage, "press direction must coincide with the insertion axis")


def emboss(shell: HeightSurface, stamp: OcclusalStamp, fill: bool = False) -> HeightSurface:
    """Press the stamp contact face into the outer surface along the press direction.

    Inside the stamp footprint the outer surface is carved up to the contact
    face wherever the tool overlaps material. With ``fill`` the contact face
    also replaces the outer surface where it lies below it, so the splint
    reaches the occlusal contacts; columns outside the footprint never change.
    """
    _check_direction(shell.grid, stamp.press_direction, "emboss")
    contact = rasterize(stamp.contact, shell.grid, "max")
    foot = np.isfinite(contact) & np.isfinite(shell.values)
    b = shell.values
    if fill:
        new = np.where(foot, contact, b)
    else:
        new = np.where(foot & (contact > b), contact, b)
    prev = shell.footprint if shell.footprint is not None else np.zeros_like(foot)
    return replace(shell, values=new, footprint=prev | foot)


def impress_mandible(shell: HeightSurface, mandible: TriangleMesh, T_th: RigidTransform,
                     params: SplintParams, max_rounds: int = 6) -> HeightSurface:
    """Carve back any outer-surface material reaching into the TP mandible.

    Column heights are raised to the mandible's upper envelope plus a small
    margin; the result is then checked triangle-by-triangle and offending
    columns are lifted to the neighbourhood maximum until nothing touches.
    """
    moved = mandible.transformed(T_th)
    top = rasterize(moved, shell.grid, "max")
    b = _lift(shell.values, top + params.mandible_margin)
    out = replace(shell, values=b)
    for k in range(max_rounds):
        surf = out.mesh
        if surf.is_empty:
            break
        hit = meshes_intersect(surf, moved, 0.0)
        if not hit.intersects:
            break
        cols = _columns_of_triangles(out.grid, surf, hit.pairs[:, 0])
        out = replace(out, values=_lift_columns(out.values, cols, top, params, k))
    return out


def _lift(b, floor):
    ok = np.isfinite(floor) & np.isfinite(b)
    return np.where(ok & (floor > b), floor, b)


def _columns_of_triangles(grid: HeightGrid, mesh: TriangleMesh, tris) -> np.ndarray:
    pts = mesh.corners[np.unique(tris)].reshape(-1, 3)
    i, j = grid.column_of(pts)
    mask = np.zeros(grid.shape, dtype=bool)
    ok = (i >= 0) & (i < grid.shape[0]) & (j >= 0) & (j < grid.shape[1])
    mask[i[ok], j[ok]] = True
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool))


def _lift_columns(b, cols, top, params: SplintParams, round_: int):
    conservative = ndimage.maximum_filter(np.where(np.isfinite(top), top, -np.inf), size=3)
    floor = conservative + params.mandible_margin + round_ * params.resolution / 2
    return np.where(cols, _lift(b, floor), b)


def resolve_conflicts(shell: HeightSurface, inner: HeightSurface, params: SplintParams):
    """Turn sub-manufacturable walls created by embossing into apertures.

    A column that carried a full wall before embossing (thickness >= 2r) but
    has less than ``2r`` left afterwards becomes an aperture: both surfaces
    drop it. Returns ``(shell, inner, loops)`` where each loop is a pair of
    polylines (inner rim, outer rim) in world coordinates.
    """
    r = params.resolution
    top = np.minimum(inner.values, inner.z_cut)
    base = shell.base if shell.base is not None else shell.values
    had_wall = np.isfinite(base) & np.isfinite(top) & (base < top - 2 * r)
    thin = had_wall & ~(shell.values < top - 2 * r)
    total = had_wall.sum()
    if total and thin.sum() / total > params.max_aperture_fraction:
        raise SplintError("resolve_conflicts",
                          f"apertures cover {thin.sum() / total:.1%} of the splint "
                          f"(limit {params.max_aperture_fraction:.0%}); the splint would be structurally meaningless")
    loops = aperture_loops(shell.grid, thin, top, base)
    return replace(shell, apertures=thin), replace(inner, apertures=thin), loops


def aperture_loops(grid: HeightGrid, apertures: np.ndarray, top, base) -> list:
    if not apertures.any():
        return []
    padded = np.pad(apertures.astype(np.float64), 1)
    loops = []
    for c in find_contours(padded, 0.5):
        ij = c - 1.0
        ii = np.clip(np.rint(ij[:, 0]).astype(int), 0, grid.shape[0] - 1)
        jj = np.clip(np.rint(ij[:, 1]).astype(int), 0, grid.shape[1] - 1)
        x = grid.origin[0] + ij[:, 0] * grid.spacing
        y = grid.origin[1] + ij[:, 1] * grid.spacing
        zi = np.where(np.isfinite(top[ii, jj]), top[ii, jj], 0.0)
        zo = np.where(np.isfinite(base[ii, jj]), base[ii, jj], 0.0)
        loops.append((grid.to_world(np.column_stack([x, y, zi])), grid.to_world(np.column_stack([x, y, zo]))))
    return loops


def _solid_columns(inner: HeightSurface, shell: HeightSurface, r: float):
    top = np.minimum(inner.values, inner.z_cut)
    bottom = shell.values.copy()
    keep = np.isfinite(bottom) & np.isfinite(top) & (top - bottom >= 2 * r)
    if shell.apertures is not None:
        keep &= ~shell.apertures
    return np.where(keep, bottom, np.inf), np.where(keep, top, -np.inf), keep


def assemble_splint(inner: HeightSurface, shell: HeightSurface, loops, params: SplintParams,
                    provenance: dict | None = None) -> SplintModel:
    """Join inner and outer surfaces along the cut and around every aperture rim."""
    ap_i = inner.apertures if inner.apertures is not None else np.zeros(inner.values.shape, bool)
    ap_o = shell.apertures if shell.apertures is not None else np.zeros(shell.values.shape, bool)
    if not np.array_equal(ap_i, ap_o):
        raise SplintError("assemble_splint", "inner and outer aperture sets differ")
    expected = len(aperture_loops(shell.grid, ap_o, inner.values, shell.values)) if ap_o.any() else 0
    if len(loops) != expected or any(len(p) != 2 for p in loops):
        raise SplintError("assemble_splint",
                          f"non-matching boundary loops: got {len(loops)}, apertures define {expected}")
    r = params.resolution
    bottom, top, keep = _solid_columns(inner, shell, r)
    if not keep.any():
        raise SplintError("assemble_splint", "no material left to contour")
    mesh = contour_solid(shell.grid, bottom, top, inner.z_cut)
    if not mesh.is_watertight:
        raise SplintError("assemble_splint", f"contoured splint is not watertight at r = {r}")
    grid = shell.grid
    inner_patch = grid.surface_mesh(top, keep & (inner.values < inner.z_cut), INNER)
    outer_patch = grid.surface_mesh(bottom, keep, OUTER)
    return SplintModel(mesh, inner_patch, outer_patch, tuple(loops), dict(provenance or {}),
                       footprint=shell.footprint, aperture_mask=ap_o, grid=grid)


# -- occlusal surface ------------------------------------------------------------------

def generate_occlusal_surface(case: DesignCase, params: SplintParams) -> TriangleMesh:
    """Crown triangles facing the MI mandible within the contact-search distance.

    The selection is closed over face adjacency (one ring grown, then shrunk)
    and trimmed to components above the minimum stamp area.
    """
    plane = _plane_for(params, case.cutting_plane, case.maxilla)
    crown = crown_region(case.maxilla, replace(params, cutting_plane=plane), case.crown_mask)
    cen = crown.corners.mean(axis=1)
    vd, _ = case.mandible.index._vtree.query(cen)
    sel = np.zeros(len(cen), dtype=bool)
    near = np.flatnonzero(vd <= params.contact_search_distance + 2 * float(case.mandible.index.radii.max()))
    if len(near):
        d = case.mandible.index.distance(cen[near])
        sel[near] = d <= params.contact_search_distance
    if not sel.any():
        raise SplintError("generate_occlusal_surface",
                          f"no occlusal region: mandible is farther than {params.contact_search_distance} mm")
    sel = _close_faces(crown, sel)
    patch = crown.submesh(sel)
    labels = component_labels(patch)
    areas = np.bincount(labels, weights=patch.face_areas)
    big = areas >= params.stamp_min_area
    if not big.any():
        raise SplintError("generate_occlusal_surface", "no occlusal region above the minimum area")
    return patch.submesh(big[labels])


def _close_faces(mesh: TriangleMesh, sel: np.ndarray) -> np.ndarray:
    vsel = np.zeros(len(mesh.vertices), dtype=bool)
    vsel[mesh.triangles[sel].ravel()] = True
    grown = vsel[mesh.triangles].any(axis=1)
    vin = np.ones(len(mesh.vertices), dtype=bool)
    vin[mesh.triangles[~grown].ravel()] = False
    return grown & vin[mesh.triangles].all(axis=1) | sel


# -- pipeline ---------------------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SplintError:
        raise
    except Exception as exc:  # propagate with the stage name attached
        raise SplintError(name, f"{type(exc).__name__}: {exc}") from exc


def build_splint(case: DesignCase, params: SplintParams | None = None, *,
                 override_feasibility: bool = False, max_repair_rounds: int = 6) -> SplintModel:
    """Feasibility, inner, outer, stamp, cleaning, embossing, mandible impression,
    apertures and assembly, in that order."""
    params = params or SplintParams()
    t0 = time.perf_counter()
    timings = {}
    warnings = []

    def timed(name, fn, *a, **kw):
        t = time.perf_counter()
        out = _stage(name, fn, *a, **kw)
        timings[name] = round(time.perf_counter() - t, 3)
        return out

    report = timed("feasibility", check_feasibility, case, params)
    if not report.feasible:
        if not override_feasibility:
            raise InfeasibleTransformError(report)
        for name in report.failed:
            v = report[name]
            warnings.append(f"feasibility override: {name} failed (value {v.value:.4f}, threshold {v.threshold:.4f})")
        log.warning("building despite failed constraints: %s", ", ".join(report.failed))

    plane = _plane_for(params, case.cutting_plane, case.maxilla)
    params = replace(params, cutting_plane=plane)
    crown = timed("crown_region", crown_region, case.maxilla, params, case.crown_mask)
    inner = timed("build_inner_surface", build_inner_surface, crown, params)
    outer = timed("build_outer_shell", build_outer_shell, inner, params)
    occlusal = case.occlusal
    if occlusal is None:
        occlusal = timed("generate_occlusal_surface", generate_occlusal_surface, case, params)
    stamp = timed("make_stamp", make_stamp, occlusal, case.T_th, params)
    stamp = timed("clean_stamp", clean_stamp, stamp, params)
    shell = timed("emboss", emboss, outer, stamp, fill=True)
    shell = timed("impress_mandible", impress_mandible, shell, case.mandible, case.T_th, params)

    moved = case.mandible.transformed(case.T_th)
    mand_top = rasterize(moved, shell.grid, "max")
    for k in range(max_repair_rounds + 1):
        shell_r, inner_r, loops = timed("resolve_conflicts", resolve_conflicts, shell, inner, params)
        model = timed("assemble_splint", assemble_splint, inner_r, shell_r, loops, params)
        hit = timed("verify_mandible", meshes_intersect, model.mesh, moved, 0.0)
        if not hit.intersects:
            break
        if k == max_repair_rounds:
            raise SplintError("impress_mandible",
                              f"splint still touches the TP mandible after {max_repair_rounds} repair rounds")
        cols = _columns_of_triangles(shell.grid, model.mesh, hit.pairs[:, 0])
        shell = replace(shell, values=_lift_columns(shell.values, cols, mand_top, params, k))

    provenance = {
        "params": params.to_dict(),
        "T_th": case.T_th.to_flat(),
        "inputs": {
            "maxilla": mesh_digest(case.maxilla),
            "mandible": mesh_digest(case.mandible),
            "occlusal": mesh_digest(case.occlusal),
        },
        "feasibility": report.to_dict(),
        "override_feasibility": bool(override_feasibility),
        "warnings": warnings,
        "apertures": len(loops),
        "stamp_components": len(stamp.component_areas),
        "stage_seconds": timings,
        "runtime_s": round(time.perf_counter() - t0, 3),
    }
    return replace(model, provenance=provenance)


class SplintBuilder(BaseEstimator):
    """Estimator wrapper: ``fit(case)`` builds ``splint_`` (a :class:`SplintModel`)."""

    def __init__(self, resolution=0.1, wall_thickness=1.5, clearance=0.1, contact_gap=0.0,
                 cutting_plane=None, cutting_depth=0.0, min_interocclusal=1.0, max_rotation_deg=10.0,
                 stamp_min_area=2.0, override_feasibility=False):
        self.resolution = resolution
        self.wall_thickness = wall_thickness
        self.clearance = clearance
        self.contact_gap = contact_gap
        self.cutting_plane = cutting_plane
        self.cutting_depth = cutting_depth
        self.min_interocclusal = min_interocclusal
        self.max_rotation_deg = max_rotation_deg
        self.stamp_min_area = stamp_min_area
        self.override_feasibility = override_feasibility

    def _params(self) -> SplintParams:
        p = self.get_params()
        p.pop("override_feasibility")
        return SplintParams(**p)

    def fit(self, case: DesignCase, y=None):
        if not isinstance(case, DesignCase):
            raise TypeError("SplintBuilder.fit expects a DesignCase")
        self.splint_ = build_splint(case, self._params(), override_feasibility=self.override_feasibility)
        self.feasibility_ = self.splint_.provenance["feasibility"]
        return self

    def transform(self, case: DesignCase = None):
        check_is_fitted(self, "splint_")
        return self.splint_.mesh
