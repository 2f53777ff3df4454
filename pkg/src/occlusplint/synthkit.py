"""Seeded synthetic dental arches, scan scenarios, bow clouds and studies.

The arch model is a parabola carrying spherical-cap cusps; the maxilla is a
height field seen from below (normals face the mandible) with a palate vault
inside the arch and a vestibule ramp outside. The mandible carries the same
number of cusps minus one, placed between the maxillary ones, and is lifted
until the two surfaces are exactly ``gap`` apart.

All randomness comes from ``numpy.random.default_rng`` (PCG64) seeded with
plain integers, so identical specs give bit-identical meshes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import Plane, RigidTransform, TriangleMesh, min_distance
from .mesh.shapes import grid_surface
from .registration import ScanPairSet, TrackerRecord, tracker_conjugate


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    width: float = 40.0          # molar-to-molar span of the arch curve [mm]
    depth: float = 32.0          # molar line to incisor apex [mm]
    tooth_count: int = 10
    cusp_height: float = 2.0
    cusp_radius: float = 3.0     # sphere radius of each cusp cap
    gap: float = 0.3             # maxilla/mandible distance in MI
    band: float = 4.0            # half-width of the flat gum band
    palate_depth: float = 8.0
    resolution: float = 0.4
    jitter: float = 0.1          # relative cusp-height jitter
    seed: int = 0

    def __post_init__(self):
        if self.tooth_count < 4:
            raise SpecError("tooth_count must be >= 4")
        if self.gap < 0:
            raise SpecError("gap must be >= 0")
        if min(self.width, self.depth, self.cusp_height, self.cusp_radius, self.resolution, self.band) <= 0:
            raise SpecError("dimensions must be positive")
        if self.cusp_height * (1 + self.jitter) >= self.cusp_radius:
            raise SpecError("cusp height must stay below the cusp radius (caps, not overhangs)")
        if not 0 <= self.jitter < 0.5:
            raise SpecError("jitter must be in [0, 0.5)")
        spacing = _arc_length(self.width, self.depth) / self.tooth_count
        if 2 * self.base_radius >= spacing:
            raise SpecError(
                f"cusps of base radius {self.base_radius:.2f} mm do not fit a tooth spacing of {spacing:.2f} mm")
        if self.base_radius >= self.band:
            raise SpecError("cusp base must fit inside the gum band")

    @property
    def base_radius(self) -> float:
        h = self.cusp_height * (1 + self.jitter)
        return float(np.sqrt(self.cusp_radius ** 2 - (self.cusp_radius - h) ** 2))


@dataclass(frozen=True)
class ArchPair:
    maxilla: TriangleMesh
    mandible: TriangleMesh
    occlusal: TriangleMesh
    crown_mask: np.ndarray = field(repr=False)    # per maxilla triangle
    palate_mask: np.ndarray = field(repr=False)   # per maxilla triangle
    cutting_plane: Plane = None
    gap: float = 0.0
    spec: ArchSpec = None


# -- arch geometry ----------------------------------------------------------------

def _parabola(width, depth, n=4001):
    x = np.linspace(-width / 2, width / 2, n)
    y = depth * (1 - (2 * x / width) ** 2)
    return np.stack([x, y], axis=1)


def _arc_length(width, depth) -> float:
    p = _parabola(width, depth)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def _points_at_arclength(curve, s):
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return np.stack([np.interp(s, cum, curve[:, 0]), np.interp(s, cum, curve[:, 1])], axis=1)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _caps(X, Y, centers, heights, radius):
    out = np.zeros_like(X)
    for (cx, cy), h in zip(centers, heights):
        rho2 = (X - cx) ** 2 + (Y - cy) ** 2
        cap = np.sqrt(np.maximum(radius ** 2 - rho2, 0.0)) - (radius - h)
        out = np.maximum(out, cap)
    return out


def _arch_fields(spec: ArchSpec):
    rng = np.random.default_rng(spec.seed)
    curve = _parabola(spec.width, spec.depth)
    total = _arc_length(spec.width, spec.depth)
    n = spec.tooth_count
    spacing = total / n
    upper_s = (np.arange(n) + 0.5) * spacing
    lower_s = np.arange(1, n) * spacing
    upper_h = spec.cusp_height * (1 + spec.jitter * rng.uniform(-1, 1, n))
    lower_h = spec.cusp_height * (1 + spec.jitter * rng.uniform(-1, 1, n - 1))
    upper_c = _points_at_arclength(curve, upper_s)
    lower_c = _points_at_arclength(curve, lower_s)

    res = spec.resolution
    margin = spec.band + 5.0
    nx = int(np.ceil((spec.width + 2 * margin) / res))
    ny = int(np.ceil((spec.depth + 2 * margin) / res))
    x = -spec.width / 2 - margin + res * np.arange(nx + 1)
    y = -margin + res * np.arange(ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")

    tree = cKDTree(curve)
    dist, _ = tree.query(np.stack([X.ravel(), Y.ravel()], axis=1))
    dist = dist.reshape(X.shape)
    # smooth inside/outside weight so the vault and vestibule meet without a cliff
    g = spec.depth * (1 - (2 * X / spec.width) ** 2) - Y
    w_in = _smoothstep(g / 6.0 + 0.5)
    rise = _smoothstep((dist - spec.band) / 4.0)
    palatal = rise * w_in
    buccal = rise * (1 - w_in)
    upper = spec.palate_depth * palatal + 3.0 * buccal - _caps(X, Y, upper_c, upper_h, spec.cusp_radius)
    lower = -6.0 * palatal - 3.0 * buccal + _caps(X, Y, lower_c, lower_h, spec.cusp_radius)
    return x, y, upper, lower, dist, palatal, upper_c


def make_arch_pair(spec: ArchSpec | None = None) -> ArchPair:
    """Maxilla/mandible in MI with the requested gap, plus the occlusal patch."""
    spec = spec or ArchSpec()
    x, y, upper, lower, dist, palatal, _ = _arch_fields(spec)
    maxilla = grid_surface(x, y, upper, flip=True)
    # place the mandible a safe vertical distance below, then close to the gap
    shift0 = float(np.min(upper - lower)) - (spec.gap + 1.0)
    base = grid_surface(x, y, lower)
    near = _near_faces(base, spec)
    probe_max = maxilla.submesh(_near_faces(maxilla, spec))
    probe_low = base.submesh(near)

    def dist_at(shift):
        return min_distance(probe_max, probe_low.with_vertices(probe_low.vertices + [0, 0, shift]))

    # d(shift) is continuous, decreasing and 1-Lipschitz: a few secant steps suffice
    s_a, d_a = shift0, dist_at(shift0)
    s_b = s_a + (d_a - spec.gap)
    d_b = dist_at(s_b)
    for _ in range(30):
        if abs(d_b - spec.gap) < 1e-9:
            break
        slope = (d_b - d_a) / (s_b - s_a) if s_b != s_a else -1.0
        if not slope < -1e-3:
            slope = -1.0
        s_a, d_a = s_b, d_b
        s_b = s_b + (spec.gap - d_b) / slope
        d_b = dist_at(s_b)
    mandible = base.with_vertices(base.vertices + [0, 0, s_b])

    # cusp region: lower part of each maxillary cap
    vz = maxilla.vertices[:, 2]
    tri_z = vz[maxilla.triangles]
    tri_dist = _vertex_field(maxilla, x, y, dist)[maxilla.triangles]
    in_band = tri_dist.max(axis=1) < spec.band
    occlusal_mask = in_band & (tri_z.max(axis=1) < -0.3 * spec.cusp_height)
    crown_mask = in_band
    pal = _vertex_field(maxilla, x, y, palatal)[maxilla.triangles]
    palate_mask = pal.min(axis=1) > 0.5
    plane = Plane((0.0, 0.0, 1.0), -0.5)
    return ArchPair(maxilla, mandible, maxilla.submesh(occlusal_mask), crown_mask, palate_mask,
                    plane, float(d_b), spec)


def _near_faces(mesh: TriangleMesh, spec: ArchSpec):
    z = mesh.vertices[:, 2][mesh.triangles]
    if mesh.face_normals[:, 2].mean() < 0:
        return z.min(axis=1) < 0.5
    return z.max(axis=1) > z.max() - 2 * spec.cusp_height - 1.0


def _vertex_field(mesh: TriangleMesh, x, y, values):
    res = x[1] - x[0]
    i = np.rint((mesh.vertices[:, 0] - x[0]) / res).astype(int)
    j = np.rint((mesh.vertices[:, 1] - y[0]) / res).astype(int)
    return values[i, j]


# -- scenarios --------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    arch: ArchSpec = field(default_factory=ArchSpec)
    T_true: RigidTransform = field(default_factory=RigidTransform.identity)
    noise: float = 0.0
    seating_offset: RigidTransform = field(default_factory=RigidTransform.identity)
    sliding_offset: RigidTransform = field(default_factory=RigidTransform.identity)
    bow_points: int = 400
    bow_size: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.noise < 0:
            raise SpecError("noise must be >= 0")
        if self.bow_points < 3:
            raise SpecError("bow needs at least 3 points")


def add_noise(mesh: TriangleMesh, sigma: float, rng: np.random.Generator) -> TriangleMesh:
    """Isotropic Gaussian per-vertex displacement."""
    if sigma == 0:
        return mesh
    return mesh.with_vertices(mesh.vertices + rng.normal(scale=sigma, size=mesh.vertices.shape))


@dataclass(frozen=True)
class ScanScenario:
    scans: ScanPairSet
    T_true: RigidTransform
    M: RigidTransform
    arch: ArchPair


def make_scan_pair_scenario(spec: ScenarioSpec, arch: ArchPair | None = None) -> ScanScenario:
    """MI scans in the reference frame and TP scans seen from a random frame ``M``:
    ``U1 = M^-1 . U0``, ``L1 = M^-1 . T_true . L0`` (plus noise)."""
    arch = arch or make_arch_pair(spec.arch)
    rng = np.random.default_rng([spec.seed, 1])
    M = RigidTransform.random(rng, 30.0, 20.0)
    minv = M.inverse()
    u0, l0 = arch.maxilla, arch.mandible
    u1 = u0.transformed(minv)
    l1 = l0.transformed(minv @ spec.T_true)
    scans = ScanPairSet(
        add_noise(u0, spec.noise, rng), add_noise(l0, spec.noise, rng),
        add_noise(u1, spec.noise, rng), add_noise(l1, spec.noise, rng))
    return ScanScenario(scans, spec.T_true, M, arch)


def make_bow(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    """A rigid, non-planar bow: a bent rod with a vertical fin, as a point cloud."""
    n = spec.bow_points
    s = np.linspace(-1, 1, n)
    half = spec.bow_size / 2
    pts = np.stack([half * s, 0.3 * half * (1 - s ** 2), 0.15 * half * np.sin(3 * s)], axis=1)
    return pts + rng.normal(scale=1e-3 * spec.bow_size, size=pts.shape) + [0.0, 40.0, -20.0]


@dataclass(frozen=True)
class TrackerScenario:
    record: TrackerRecord
    T_B: RigidTransform
    T_th: RigidTransform


def make_tracker_scenario(spec: ScenarioSpec, T_F: RigidTransform | None = None,
                          T_D: RigidTransform | None = None, T_B: RigidTransform | None = None) -> TrackerScenario:
    rng = np.random.default_rng([spec.seed, 2])
    b0 = make_bow(spec, rng)
    T_B = T_B if T_B is not None else RigidTransform.random(rng, 8.0, 4.0)
    T_F = T_F if T_F is not None else RigidTransform.random(rng, 180.0, 50.0)
    T_D = T_D if T_D is not None else RigidTransform.random(rng, 180.0, 50.0)
    b1 = T_B.apply(b0)
    if spec.noise:
        b0 = b0 + rng.normal(scale=spec.noise, size=b0.shape)
        b1 = b1 + rng.normal(scale=spec.noise, size=b1.shape)
    return TrackerScenario(TrackerRecord(b0, b1, T_F, T_D), T_B, tracker_conjugate(T_F, T_D, T_B))


# -- studies -----------------------------------------------------------------------

def default_study_specs(cases: int = 8, noise: float = 0.0, arch: ArchSpec | None = None, seed: int = 0,
                        seating_offsets: dict | None = None) -> list[ScenarioSpec]:
    """``cases`` scenarios sharing one arch, each with its own opening/protrusion.

    ``seating_offsets`` maps a case index to the splint seating error injected
    for that case (e.g. ``{2: RigidTransform.from_translation((0, 0, -0.3))}``).
    """
    if cases < 1:
        raise SpecError("a study needs at least one case")
    arch = arch or ArchSpec()
    offsets = seating_offsets or {}
    specs = []
    for k in range(cases):
        t = (0.0, 0.25 * (k % 4), -1.2 - 0.15 * k)
        specs.append(ScenarioSpec(arch, RigidTransform.from_translation(t), noise,
                                  offsets.get(k, RigidTransform.identity()), seed=seed + k))
    return specs


@dataclass(frozen=True)
class SyntheticStudy:
    cases: tuple          # accuracy.StudyCase per scenario
    shared: dict          # study-wide inputs (mandible reference scan)
    ledger: tuple         # ground-truth rows (dict per case and stage)
    splints: tuple        # splint.SplintModel per scenario
    arch: ArchPair


def _scan(mesh: TriangleMesh, sigma: float, rng: np.random.Generator) -> TriangleMesh:
    """Measured copy of ``mesh`` seen from a random scanner frame, with noise."""
    frame = RigidTransform.random(rng, 30.0, 20.0)
    return add_noise(mesh.transformed(frame.inverse()), sigma, rng)


def _joined(a: TriangleMesh, b: TriangleMesh):
    """Concatenate two meshes; returns the mesh and the triangle mask of ``a``."""
    v = np.vstack([a.vertices, b.vertices])
    f = np.vstack([a.triangles, b.triangles + len(a.vertices)])
    mask = np.zeros(len(f), dtype=bool)
    mask[:len(a.triangles)] = True
    return TriangleMesh(v, f), mask


def _expected(points, reference: TriangleMesh) -> tuple[float, float]:
    d = reference.index.signed_distance(points)
    return float(d.mean()), float(d.std())


def make_study(specs, splint_params=None) -> SyntheticStudy:
    """Build one splint per scenario and synthesise every scan the accuracy stages need.

    Scans are the noise-free models seen from seeded random frames, plus the
    scenario noise. The seated scan joins the palate with the splint displaced
    by the seating offset; the bite scan joins the splint with the mandible at
    ``sliding_offset . T_true``. The ledger records, per case and stage, the
    values a perfect analysis returns on noise-free input.
    """
    from .accuracy import StudyCase
    from .registration import decompose_error
    from .splint import DesignCase, SplintParams, build_splint

    specs = list(specs)
    if not specs:
        raise SpecError("a study needs at least one scenario")
    if len({s.arch for s in specs}) != 1:
        raise SpecError("all scenarios of a study share one arch")
    arch = make_arch_pair(specs[0].arch)
    params = splint_params or SplintParams(resolution=0.2, cutting_plane=arch.cutting_plane)
    maxilla, mandible = arch.maxilla, arch.mandible
    palate = maxilla.submesh(arch.palate_mask)

    shared_rng = np.random.default_rng([specs[0].seed, 4])
    shared = {"maxilla_model": maxilla, "mandible_model": mandible,
              "mandible_scan": _scan(mandible, specs[0].noise, shared_rng)}
    cases, ledger, splints = [], [], []
    for k, spec in enumerate(specs):
        label = str(k + 1)
        design = DesignCase(maxilla, mandible, spec.T_true, occlusal=arch.occlusal, crown_mask=arch.crown_mask,
                            cutting_plane=arch.cutting_plane)
        model = build_splint(design, params)
        splint = model.mesh
        rng = np.random.default_rng([spec.seed, 3])
        S, D, T = spec.seating_offset, spec.sliding_offset, spec.T_true
        seated, seated_mask = _joined(splint.transformed(S), palate)
        moved_mand = mandible.transformed(D @ T)
        bite, bite_mask = _joined(splint, moved_mand)
        cases.append(StudyCase(
            label, T, splint_model=splint,
            splint_scan=_scan(splint, spec.noise, rng),
            maxilla_scan=_scan(maxilla, spec.noise, rng),
            seated_scan=_scan(seated, spec.noise, rng),
            seated_splint_mask=seated_mask, seated_palate_mask=~seated_mask,
            bite_scan=_scan(bite, spec.noise, rng),
            bite_splint_mask=bite_mask, bite_mandible_mask=~bite_mask))
        splints.append(model)

        target = mandible.transformed(T)
        achieved = S @ D @ T
        truth = {
            "splint_vs_model": (0.0, 0.0, RigidTransform.identity()),
            "maxilla_vs_model": (0.0, 0.0, RigidTransform.identity()),
            "mandible_vs_model": (0.0, 0.0, RigidTransform.identity()),
            "maxillary_clearance": _expected(S.inverse().apply(palate.vertices), maxilla) + (S,),
            "mandibular_sliding": _expected(moved_mand.vertices, target) + (D.inverse(),),
            "mandibular_transformation": _expected(achieved.apply(mandible.vertices), target)
            + (T @ achieved.inverse(),),
        }
        for stage, (avg, std, corr) in truth.items():
            alpha, t = decompose_error(corr)
            ledger.append({"splint": label, "stage": stage, "AVG_mm": avg, "STD_mm": std,
                           "alpha_deg": alpha, "t_mm": t, "noise_mm": float(spec.noise),
                           "seed": int(spec.seed)})
    return SyntheticStudy(tuple(cases), shared, tuple(ledger), tuple(splints), arch)


def ledger_csv(rows: list[dict]) -> str:
    """Ground-truth ledger as CSV text (fixed column order from the first row)."""
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def spec_to_dict(spec: ArchSpec) -> dict:
    return asdict(spec)
