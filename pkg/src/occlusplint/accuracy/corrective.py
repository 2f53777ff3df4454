"""Corrective rigid fits over a masked region (seating and sliding errors)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..mesh import RigidTransform, TriangleMesh
from ..registration import POINT_TO_PLANE, IcpParams, RegistrationError, decompose_error, icp_align
from .stats import AccuracyError, DeviationStats

CORRECTIVE_ICP = IcpParams(max_iterations=200, tolerance=1e-8, rejection_distance=2.0, trim_fraction=1.0,
                           metric=POINT_TO_PLANE, initial=RigidTransform.identity(), sample_size=6000)


@dataclass(frozen=True)
class CorrectiveFit:
    transform: RigidTransform        # maps the measured region onto the reference
    before: DeviationStats
    residual: DeviationStats
    alpha: float                     # [deg]
    t: float                         # [mm]

    @property
    def objective_before(self) -> float:
        return self.before.N * (self.before.STD ** 2 + self.before.AVG ** 2)

    @property
    def objective_after(self) -> float:
        return self.residual.N * (self.residual.STD ** 2 + self.residual.AVG ** 2)


def region_points(mesh: TriangleMesh, triangle_mask=None) -> np.ndarray:
    if triangle_mask is None:
        return mesh.vertices
    mask = np.asarray(triangle_mask, dtype=bool)
    if mask.shape != (len(mesh.triangles),):
        raise AccuracyError("region mask must have one entry per triangle")
    return mesh.vertices[np.unique(mesh.triangles[mask])]


def _sq(signed) -> float:
    return math.fsum(signed ** 2)


def fit_corrective(measured: TriangleMesh, reference: TriangleMesh, region_mask=None,
                   params: IcpParams | None = None) -> CorrectiveFit:
    """Rigid motion minimising squared signed point-to-surface deviations over the region.

    Point-to-plane ICP started at identity; the result is kept only if it
    lowers the untrimmed squared-deviation sum, so the fit never worsens it.
    """
    pts = region_points(measured, region_mask)
    if len(pts) == 0:
        raise AccuracyError("empty corrective region")
    params = params or CORRECTIVE_ICP
    before = reference.index.signed_distance(pts)
    try:
        res = icp_align(pts, reference, params)
    except RegistrationError as exc:
        raise RegistrationError(f"corrective fit failed: {exc}") from exc
    fit = res.transform
    after = reference.index.signed_distance(fit.apply(pts))
    if not _sq(after) <= _sq(before):
        fit, after = RigidTransform.identity(), before
    alpha, t = decompose_error(fit)
    return CorrectiveFit(fit, DeviationStats.from_errors(before), DeviationStats.from_errors(after), alpha, t)
