"""Geometric gating of a therapeutic transform before any splint is built."""

from __future__ import annotations

import numpy as np

from ..mesh import meshes_intersect, min_distance
from ..registration import decompose_error
from .model import ConstraintVerdict, DesignCase, FeasibilityReport, SplintParams


def contact_eccentricity(maxilla, mandible_tp, band: float) -> tuple[float, float]:
    """Off-centre shift of the nearest-contact zone, relative to the arch spread.

    Returns ``(eccentricity, min_distance)``. The near zone holds maxilla
    vertices within ``band`` of the closest approach; the reference zone holds
    those within ``3 * band``.
    """
    vd, _ = mandible_tp.index._vtree.query(maxilla.vertices)
    pick = np.flatnonzero(vd <= vd.min() + 3 * band + 1.0)
    d = mandible_tp.index.distance(maxilla.vertices[pick])
    dmin = float(d.min())
    zone = maxilla.vertices[pick[d <= dmin + 3 * band]]
    near = maxilla.vertices[pick[d <= dmin + band]]
    c = zone.mean(axis=0)
    spread = float(np.sqrt(np.mean(np.sum((zone - c) ** 2, axis=1))))
    if spread == 0:
        return 0.0, dmin
    return float(np.linalg.norm(near.mean(axis=0) - c) / spread), dmin


def check_feasibility(case: DesignCase, params: SplintParams | None = None) -> FeasibilityReport:
    params = params or SplintParams()
    moved = case.mandible.transformed(case.T_th)
    dist = min_distance(case.maxilla, moved)
    hit = meshes_intersect(case.maxilla, moved, 0.0)
    alpha, t = decompose_error(case.T_th)
    ecc, _ = contact_eccentricity(case.maxilla, moved, params.contact_band)
    verdicts = [
        ConstraintVerdict("clearance", dist >= params.min_interocclusal, dist, params.min_interocclusal,
                          "minimum maxilla/mandible distance in TP [mm]"),
        ConstraintVerdict("intersection", not hit.intersects, float(len(hit.pairs)), 0.0,
                          "intersecting triangle pairs in TP"),
        ConstraintVerdict("rotation", alpha <= params.max_rotation_deg, alpha, params.max_rotation_deg,
                          "rotation of T_th [deg]"),
        ConstraintVerdict("translation", t <= params.max_translation_mm, t, params.max_translation_mm,
                          "translation of T_th [mm]"),
        ConstraintVerdict("contact_uniformity", ecc <= params.max_eccentricity, ecc, params.max_eccentricity,
                          "eccentricity of the nearest-contact zone"),
    ]
    if case.condyle is not None and case.fossa is not None:
        tmj = meshes_intersect(case.condyle.transformed(case.T_th), case.fossa, 0.0)
        verdicts.append(ConstraintVerdict("tmj", not tmj.intersects, float(len(tmj.pairs)), 0.0,
                                          "condyle/fossa intersecting triangle pairs"))
    else:
        verdicts.append(ConstraintVerdict("tmj", None, None, None, "no bone meshes supplied"))
    return FeasibilityReport(tuple(verdicts))
