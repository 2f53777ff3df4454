"""Cross-section profiles of labelled meshes and wall thickness along them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import Plane, Polyline, TriangleMesh, plane_section

ROLES = ("maxilla", "mandible", "splint", "splint_inner", "splint_outer", "occlusal_target", "stamp")


@dataclass(frozen=True)
class ProfileSection:
    plane: Plane
    polylines: dict = field(default_factory=dict)   # role -> list[Polyline]

    def roles(self) -> list[str]:
        return [k for k, v in self.polylines.items() if v]

    def transformed(self, transform) -> "ProfileSection":
        moved = {k: [Polyline(transform.apply(p.points), p.closed) for p in v] for k, v in self.polylines.items()}
        return ProfileSection(self.plane.transformed(transform), moved)


def extract_profiles(meshes: dict, plane: Plane) -> ProfileSection:
    """Section every labelled mesh; roles without a crossing get an empty list."""
    out = {}
    for role, mesh in meshes.items():
        out[role] = [] if mesh is None or mesh.is_empty else plane_section(mesh, plane)
    return ProfileSection(plane, out)


def _segments(lines):
    a, b = [], []
    for p in lines:
        pts = p.points
        if p.closed:
            pts = np.vstack([pts, pts[:1]])
        a.append(pts[:-1])
        b.append(pts[1:])
    return np.concatenate(a), np.concatenate(b)


def profile_thickness(section: ProfileSection, inner: str = "splint_inner", outer: str = "splint_outer") -> np.ndarray:
    """Distance from each outer-profile vertex to the nearest inner-profile segment."""
    if not section.polylines.get(inner) or not section.polylines.get(outer):
        return np.zeros(0)
    a, b = _segments(section.polylines[inner])
    pts = np.concatenate([p.points for p in section.polylines[outer]])
    ab = b - a
    den = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    out = np.empty(len(pts))
    for lo in range(0, len(pts), 512):
        p = pts[lo:lo + 512, None, :]
        t = np.clip(np.einsum("pij,ij->pi", p - a[None], ab) / den, 0.0, 1.0)
        q = a[None] + t[..., None] * ab[None]
        out[lo:lo + 512] = np.linalg.norm(p - q, axis=2).min(axis=1)
    return out
