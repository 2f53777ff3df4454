"""Six-stage accuracy protocol over a set of fabricated-splint cases.

Stages 1-3 compare scans with their digital models after rigid registration.
Stages 4-6 fit corrective motions: seating of the splint on the maxilla,
sliding of the mandible on the splint, and the resulting mandible-to-maxilla
relation against the prescribed ``T_th``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..mesh import RigidTransform, TriangleMesh
from ..registration import IcpParams, RegistrationError, icp_align
from .corrective import CorrectiveFit, fit_corrective, region_points
from .stats import AccuracyError, DeviationStats, StudySummary, aggregate, deviation_map

log = logging.getLogger(__name__)

STAGES = (
    "splint_vs_model",
    "maxilla_vs_model",
    "mandible_vs_model",
    "maxillary_clearance",
    "mandibular_sliding",
    "mandibular_transformation",
)
STAGE_TITLES = {
    "splint_vs_model": "Splint vs. model",
    "maxilla_vs_model": "Maxilla vs. model",
    "mandible_vs_model": "Mandible vs. model",
    "maxillary_clearance": "Maxillary clearance",
    "mandibular_sliding": "Mandibular sliding",
    "mandibular_transformation": "Mandibular transformation",
}
# Registration order for the seated scan: "splint" registers it on the splint model and fits the
# palate against the maxilla; "maxilla" registers it on the maxilla (palate) and fits the splint.
CHAINS = ("splint", "maxilla")

REGISTER_ICP = IcpParams(max_iterations=200, tolerance=1e-8)


@dataclass(frozen=True)
class StudyCase:
    """Inputs of one fabricated splint. Any missing field skips the stages that need it.

    ``seated_scan`` shows the maxilla with the splint in place (masks select
    the splint and palate triangles); ``bite_scan`` shows the splint with the
    mandible closed onto it (masks select splint and mandible triangles).
    """

    label: str
    T_th: RigidTransform
    splint_model: TriangleMesh | None = None
    maxilla_model: TriangleMesh | None = None
    mandible_model: TriangleMesh | None = None
    splint_scan: TriangleMesh | None = None
    maxilla_scan: TriangleMesh | None = None
    mandible_scan: TriangleMesh | None = None
    seated_scan: TriangleMesh | None = None
    seated_splint_mask: np.ndarray | None = field(default=None, repr=False)
    seated_palate_mask: np.ndarray | None = field(default=None, repr=False)
    bite_scan: TriangleMesh | None = None
    bite_splint_mask: np.ndarray | None = field(default=None, repr=False)
    bite_mandible_mask: np.ndarray | None = field(default=None, repr=False)

    def with_defaults(self, shared: dict | None) -> "StudyCase":
        """Fill missing fields from study-wide values (e.g. one mandible reference scan)."""
        if not shared:
            return self
        names = {f.name for f in fields(self)}
        unknown = set(shared) - names
        if unknown:
            raise ValueError(f"unknown shared fields: {sorted(unknown)}")
        kw = {k: v for k, v in shared.items() if getattr(self, k) is None}
        return type(self)(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **kw})


@dataclass(frozen=True)
class StageResult:
    name: str
    labels: tuple
    results: tuple              # DeviationStats (stages 1-3) or CorrectiveFit (4-6)
    skipped: tuple              # (label, reason)
    summary: StudySummary | None

    @property
    def stats(self) -> list[DeviationStats]:
        return [r.before if isinstance(r, CorrectiveFit) else r for r in self.results]

    def outlier(self) -> str | None:
        """Label with the largest STD (ties: largest t, then first)."""
        if not self.results:
            return None
        key = [(s.STD, getattr(r, "t", 0.0)) for s, r in zip(self.stats, self.results)]
        return self.labels[max(range(len(key)), key=lambda i: key[i])]


@dataclass(frozen=True)
class StudyReport:
    stages: dict                 # stage name -> StageResult
    chain: str
    maps: dict = field(default_factory=dict, repr=False)   # (stage, label) -> (mesh, per-vertex errors)

    def __getitem__(self, name) -> StageResult:
        return self.stages[name]


def _register(scan_pts, model: TriangleMesh, params: IcpParams) -> RigidTransform:
    return icp_align(scan_pts, model, params).transform


def _submesh(mesh: TriangleMesh, mask) -> TriangleMesh:
    return mesh if mask is None else mesh.submesh(np.asarray(mask, dtype=bool))


def _need(case: StudyCase, *names):
    missing = [n for n in names if getattr(case, n) is None]
    if missing:
        raise _Skip("missing " + ", ".join(missing))


class _Skip(Exception):
    pass


def _compare(scan: TriangleMesh, model: TriangleMesh, params, opts):
    T = _register(scan.vertices, model, params)
    moved = scan.transformed(T)
    dm = deviation_map(moved, model, **opts)
    return dm.stats, (moved, dm.errors)


def _seating(case: StudyCase, params, chain):
    """Seating correction ``S``: maps content of the splint frame into the maxilla frame."""
    _need(case, "seated_scan", "splint_model", "maxilla_model", "seated_palate_mask", "seated_splint_mask")
    scan = case.seated_scan
    if chain == "splint":
        scan = scan.transformed(_register(region_points(scan, case.seated_splint_mask), case.splint_model, params))
        fit = fit_corrective(scan, case.maxilla_model, case.seated_palate_mask)
        return fit, fit.transform
    # a palate vault alone has no reliable blind start; the splint pose seeds it
    coarse = _register(region_points(scan, case.seated_splint_mask), case.splint_model, params)
    T = icp_align(region_points(scan, case.seated_palate_mask), case.maxilla_model,
                  replace(params, initial=coarse)).transform
    scan = scan.transformed(T)
    fit = fit_corrective(scan, case.splint_model, case.seated_splint_mask)
    return fit, fit.transform.inverse()


def _bite(case: StudyCase, params):
    """Bite scan registered on the splint model."""
    _need(case, "bite_scan", "splint_model", "mandible_model", "bite_mandible_mask", "bite_splint_mask")
    scan = case.bite_scan
    return scan.transformed(_register(region_points(scan, case.bite_splint_mask), case.splint_model, params))


def stage_pipeline(cases, shared: dict | None = None, *, chain: str = "splint", params: IcpParams | None = None,
                   deviation_options: dict | None = None, keep_maps: bool = False,
                   stages=STAGES) -> StudyReport:
    """Run the selected stages on every case; a case lacking inputs is skipped per stage."""
    if chain not in CHAINS:
        raise ValueError(f"chain must be one of {CHAINS}")
    params = params or REGISTER_ICP
    opts = dict(deviation_options or {})
    cases = [c.with_defaults(shared) for c in cases]
    if not cases:
        raise AccuracyError("empty study")
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    rows = {s: ([], [], []) for s in STAGES}
    maps = {}
    seat_fit = {}
    bite_reg = {}

    def bite(c):
        if c.label not in bite_reg:
            bite_reg[c.label] = _bite(c, params)
        return bite_reg[c.label]

    def run(stage, case, fn):
        if stage not in stages:
            return
        labels, results, skipped = rows[stage]
        try:
            out, extra = fn(case)
        except _Skip as why:
            skipped.append((case.label, str(why)))
            return
        except (RegistrationError, AccuracyError) as exc:
            log.warning("stage %s, case %s: %s", stage, case.label, exc)
            skipped.append((case.label, f"{type(exc).__name__}: {exc}"))
            return
        labels.append(case.label)
        results.append(out)
        if keep_maps and extra is not None:
            maps[(stage, case.label)] = extra

    def s1(c):
        _need(c, "splint_scan", "splint_model")
        return _compare(c.splint_scan, c.splint_model, params, opts)

    def s2(c):
        _need(c, "maxilla_scan", "maxilla_model")
        return _compare(c.maxilla_scan, c.maxilla_model, params, opts)

    def s3(c):
        _need(c, "mandible_scan", "mandible_model")
        return _compare(c.mandible_scan, c.mandible_model, params, opts)

    def s4(c):
        fit, seat = _seating(c, params, chain)
        seat_fit[c.label] = seat
        return fit, None

    def s5(c):
        target = c.mandible_model.transformed(c.T_th)
        return fit_corrective(bite(c), target, c.bite_mandible_mask), None

    def s6(c):
        if c.label not in seat_fit:
            seat_fit[c.label] = _seating(c, params, chain)[1]
        scan = bite(c).transformed(seat_fit[c.label])
        target = c.mandible_model.transformed(c.T_th)
        return fit_corrective(scan, target, c.bite_mandible_mask), None

    for case in cases:
        for stage, fn in zip(STAGES, (s1, s2, s3, s4, s5, s6)):
            run(stage, case, fn)

    out = {}
    for s in STAGES:
        if s not in stages:
            continue
        labels, results, skipped = rows[s]
        res = StageResult(s, tuple(labels), tuple(results), tuple(skipped), None)
        if results:
            res = StageResult(s, res.labels, res.results, res.skipped, aggregate(res.stats, labels))
        out[s] = res
    return StudyReport(out, chain, maps)
