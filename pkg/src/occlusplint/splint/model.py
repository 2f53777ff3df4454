"""Inputs, parameters and results of the splint builder."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..mesh import Plane, RigidTransform, TriangleMesh


class SplintError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class InfeasibleTransformError(SplintError):
    def __init__(self, report: "FeasibilityReport"):
        failed = ", ".join(report.failed)
        super().__init__("feasibility", f"therapeutic transform is infeasible: {failed}")
        self.report = report


@dataclass(frozen=True)
class SplintParams:
    resolution: float = 0.1
    wall_thickness: float = 1.5
    clearance: float = 0.1
    contact_gap: float = 0.0
    cutting_plane: Plane | None = None
    cutting_depth: float = 0.0
    min_interocclusal: float = 1.0
    max_rotation_deg: float = 10.0
    max_translation_mm: float = 15.0
    stamp_min_area: float = 2.0
    spike_angle_deg: float = 80.0
    stamp_depth: float = 5.0
    contact_search_distance: float = 1.0
    contact_band: float = 1.0
    max_eccentricity: float = 0.5
    max_aperture_fraction: float = 0.5
    mandible_margin: float = 0.01

    def __post_init__(self):
        r = self.resolution
        if not r > 0:
            raise ValueError("resolution must be > 0")
        if self.wall_thickness < 2 * r - 1e-12:
            raise ValueError(f"wall thickness {self.wall_thickness} mm is below two voxels (2r = {2 * r} mm)")
        if self.clearance < 0 or self.contact_gap < 0 or self.cutting_depth < 0:
            raise ValueError("clearance, contact gap and cutting depth must be >= 0")
        if not self.min_interocclusal > 0:
            raise ValueError("interocclusal clearance threshold must be > 0")
        if self.stamp_min_area < 0 or not 0 < self.spike_angle_deg <= 180:
            raise ValueError("invalid stamp-cleaning thresholds")
        if not self.stamp_depth > 0 or not self.contact_search_distance > 0:
            raise ValueError("stamp depth and contact search distance must be > 0")
        if not 0 < self.max_aperture_fraction <= 1:
            raise ValueError("max_aperture_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.cutting_plane is not None:
            d["cutting_plane"] = {"normal": list(self.cutting_plane.normal), "offset": self.cutting_plane.offset}
        return d


@dataclass(frozen=True)
class DesignCase:
    maxilla: TriangleMesh
    mandible: TriangleMesh
    T_th: RigidTransform
    occlusal: TriangleMesh | None = None
    crown_mask: np.ndarray | None = field(default=None, repr=False)
    cutting_plane: Plane | None = None
    condyle: TriangleMesh | None = None
    fossa: TriangleMesh | None = None

    def __post_init__(self):
        if self.maxilla.is_empty or self.mandible.is_empty:
            raise ValueError("maxilla and mandible must be non-empty")
        if self.crown_mask is not None and len(self.crown_mask) != len(self.maxilla.triangles):
            raise ValueError("crown mask length must match the maxilla triangle count")


@dataclass(frozen=True)
class ConstraintVerdict:
    name: str
    passed: bool | None        # None: not evaluated
    value: float | None
    threshold: float | None
    note: str = ""


@dataclass(frozen=True)
class FeasibilityReport:
    verdicts: tuple

    @property
    def feasible(self) -> bool:
        return all(v.passed is not False for v in self.verdicts)

    @property
    def failed(self) -> list[str]:
        return [v.name for v in self.verdicts if v.passed is False]

    def __getitem__(self, name) -> ConstraintVerdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "constraints": [asdict(v) for v in self.verdicts]}

    def format(self) -> str:
        lines = []
        for v in self.verdicts:
            state = {True: "pass", False: "FAIL", None: "not evaluated"}[v.passed]
            val = "" if v.value is None else f" value={v.value:.4f}"
            thr = "" if v.threshold is None else f" threshold={v.threshold:.4f}"
            lines.append(f"{v.name:<20} {state}{val}{thr}{' ' + v.note if v.note else ''}")
        lines.append(f"overall: {'feasible' if self.feasible else 'infeasible'}")
        return "\n".join(lines)


@dataclass(frozen=True)
class SplintModel:
    mesh: TriangleMesh
    inner: TriangleMesh
    outer: TriangleMesh
    aperture_loops: tuple
    provenance: dict
    footprint: np.ndarray | None = field(default=None, repr=False)
    aperture_mask: np.ndarray | None = field(default=None, repr=False)
    grid: object = field(default=None, repr=False)


def mesh_digest(mesh: TriangleMesh | None) -> str | None:
    if mesh is None:
        return None
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()
