"""Embossing stamp: the occlusal surface in the therapeutic position as a pressing tool."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import RigidTransform, TriangleMesh, boundary_loops, component_labels
from ..mesh.core import merge_vertices
from ..mesh.shapes import close_between
from .model import SplintError, SplintParams


@dataclass(frozen=True)
class OcclusalStamp:
    mesh: TriangleMesh              # closed tool
    contact: TriangleMesh           # contact face, normals along the press direction
    press_direction: np.ndarray
    depth: float

    @property
    def component_areas(self) -> list[float]:
        labels = component_labels(self.contact)
        return [float(self.contact.face_areas[labels == k].sum()) for k in range(labels.max() + 1)]


def press_direction(params: SplintParams) -> np.ndarray:
    if params.cutting_plane is not None:
        return params.cutting_plane.n
    return np.array([0.0, 0.0, 1.0])


def extrude(contact: TriangleMesh, direction, depth: float) -> TriangleMesh:
    """Close ``contact`` into a prism reaching ``depth`` against ``direction``."""
    bottom = contact.with_vertices(contact.vertices - depth * np.asarray(direction)).flipped()
    return close_between(contact, bottom)


def make_stamp(occlusal: TriangleMesh, T_th: RigidTransform, params: SplintParams,
               direction=None) -> OcclusalStamp:
    """Move the occlusal surface to TP, lift it by the contact gap and extrude it."""
    if occlusal is None or occlusal.is_empty:
        raise SplintError("make_stamp", "empty occlusal surface")
    n = press_direction(params) if direction is None else np.asarray(direction, dtype=np.float64)
    n = n / np.linalg.norm(n)
    face = occlusal.transformed(T_th)
    face = face.with_vertices(face.vertices + params.contact_gap * n)
    if np.sum(face.face_normals_raw @ n) < 0:
        face = face.flipped()
    return OcclusalStamp(extrude(face, n, params.stamp_depth), face, n, params.stamp_depth)


def _fill_holes(mesh: TriangleMesh, interior: np.ndarray) -> TriangleMesh:
    """Fan-fill boundary loops made only of formerly interior vertices."""
    v = [mesh.vertices]
    faces = [mesh.triangles]
    nxt = len(mesh.vertices)
    for loop in boundary_loops(mesh):
        if len(loop) < 3 or not interior[loop].all():
            continue
        v.append(mesh.vertices[loop].mean(axis=0)[None])
        b = np.roll(loop, -1)
        faces.append(np.stack([b, loop, np.full(len(loop), nxt)], axis=1))
        nxt += 1
    if len(faces) == 1:
        return mesh
    return TriangleMesh(np.vstack(v), np.concatenate(faces))


def clean_stamp(stamp: OcclusalStamp, params: SplintParams) -> OcclusalStamp:
    """Drop spike facets and tiny components from the contact face, then re-extrude."""
    face = stamp.contact
    n = stamp.press_direction
    cos_lim = np.cos(np.radians(params.spike_angle_deg))
    keep = face.face_normals @ n >= cos_lim
    if not keep.all():
        interior = ~face.boundary_vertex_mask
        cut = face.submesh(keep)
        # submesh re-indexes vertices; carry the interior flag through positions
        _, idx = face.index._vtree.query(cut.vertices)
        face = _fill_holes(cut, interior[idx]) if not cut.is_empty else cut
    if face.is_empty:
        raise SplintError("clean_stamp", "spike removal left no contact surface")
    labels = component_labels(face)
    areas = np.bincount(labels, weights=face.face_areas)
    big = areas >= params.stamp_min_area
    if not big.any():
        raise SplintError("clean_stamp", f"no stamp component reaches {params.stamp_min_area} mm^2 "
                                         f"(largest {areas.max():.3f} mm^2)")
    if not big.all():
        face = face.submesh(big[labels])
    if face is stamp.contact:
        return stamp
    v, f = merge_vertices(face.vertices, face.triangles, tol=1e-9)
    face = TriangleMesh(v, f)
    return OcclusalStamp(extrude(face, n, stamp.depth), face, n, stamp.depth)
