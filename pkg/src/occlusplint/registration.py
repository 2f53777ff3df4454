"""Rigid registration and therapeutic-transform estimation.

Two estimation routes are provided. ``estimate_tth_from_scans`` works from
intraoral scans taken in maximum intercuspation (MI) and in the therapeutic
position (TP); ``estimate_tth_from_tracker`` works from a tracked mandibular
bow plus the calibration transforms linking face-scanner and dental-model
frames. Both return the rigid motion of the mandible from MI to TP expressed
in the dental-model (reference) frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .mesh import RigidTransform, TriangleMesh
from .mesh.transform import NotRigidError

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


class DegenerateConfigurationError(RegistrationError, ValueError):
    pass


# -- closed-form fit ------------------------------------------------------------

def _as_points(x) -> np.ndarray:
    if isinstance(x, TriangleMesh):
        return x.vertices
    p = np.asarray(x, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("points contain non-finite values")
    return p


def fit_rigid(source, target, weights=None) -> RigidTransform:
    """Least-squares rigid motion mapping ``source`` points onto ``target`` points.

    SVD solution of the orthogonal Procrustes problem with reflection guard
    and unit scale.
    """
    src = _as_points(source)
    tgt = _as_points(target)
    if src.shape != tgt.shape:
        raise ValueError("source and target must have the same shape")
    if len(src) < 3:
        raise DegenerateConfigurationError(f"need at least 3 point pairs, got {len(src)}")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    w = w / w.sum()
    cs = w @ src
    ct = w @ tgt
    a = src - cs
    b = tgt - ct
    sv = np.linalg.svd(a * np.sqrt(w)[:, None], compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("point configuration is collinear or degenerate")
    h = (a * w[:, None]).T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform.from_rt(rot, ct - rot @ cs)


def decompose_error(transform: RigidTransform) -> tuple[float, float]:
    """Rotation angle [deg] and translation norm [mm] of a rigid motion.

    The angle is ``arccos((trace(R) - 1) / 2)``, evaluated through ``atan2``
    with the rotation-axis vector so small angles keep full precision.
    """
    r = transform.rotation
    c = (np.trace(r) - 1.0) / 2.0
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = np.linalg.norm(axis) / 2.0
    alpha = float(np.degrees(np.arctan2(s, c)))
    return alpha, float(np.linalg.norm(transform.translation))


# -- ICP ------------------------------------------------------------------------

POINT_TO_POINT = "point_to_point"
POINT_TO_PLANE = "point_to_plane"


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    tolerance: float = 1e-5
    rejection_distance: float = 2.0
    trim_fraction: float = 0.9
    metric: str = POINT_TO_PLANE
    initial: RigidTransform | None = None
    sample_size: int | None = 4000   # source points used per iteration (evenly strided)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0 or not self.rejection_distance > 0:
            raise ValueError("thresholds must be positive")
        if not 0 < self.trim_fraction <= 1:
            raise ValueError("trim_fraction must be in (0, 1]")
        if self.metric not in (POINT_TO_POINT, POINT_TO_PLANE):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.sample_size is not None and self.sample_size < 3:
            raise ValueError("sample_size must be >= 3")


@dataclass(frozen=True)
class AlignmentResult:
    transform: RigidTransform
    rms: float
    iterations: int
    inlier_fraction: float
    history: tuple = field(default=(), repr=False)


class _Target:
    """Closest-point oracle over a mesh surface or a bare point cloud."""

    def __init__(self, target):
        if isinstance(target, TriangleMesh) and not target.is_empty:
            self.mesh = target
            self.points = target.vertices
        else:
            self.mesh = None
            self.points = _as_points(target)
        self.tree = cKDTree(self.points)

    def closest(self, pts, exact: bool = True):
        if self.mesh is not None and exact:
            d, q, tri, _ = self.mesh.index.nearest(pts)
            return d, q, self._smooth_normals(q, tri)
        d, j = self.tree.query(pts)
        n = self.mesh.vertex_normals[j] if self.mesh is not None else None
        return d, self.points[j], n

    @property
    def edge_scale(self) -> float:
        if self.mesh is None:
            return 0.0
        e = self.mesh.edges
        return float(np.median(np.linalg.norm(self.points[e[:, 0]] - self.points[e[:, 1]], axis=1)))

    def _smooth_normals(self, q, tri):
        # barycentric blend of vertex normals: far less noise-sensitive than facets
        c = self.mesh.corners[tri]
        v0, v1, v2 = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0], q - c[:, 0]
        d00 = np.einsum("ij,ij->i", v0, v0)
        d01 = np.einsum("ij,ij->i", v0, v1)
        d11 = np.einsum("ij,ij->i", v1, v1)
        d20 = np.einsum("ij,ij->i", v2, v0)
        d21 = np.einsum("ij,ij->i", v2, v1)
        den = d00 * d11 - d01 * d01
        b1 = (d11 * d20 - d01 * d21) / den
        b2 = (d00 * d21 - d01 * d20) / den
        vn = self.mesh.vertex_normals[self.mesh.triangles[tri]]
        n = (1 - b1 - b2)[:, None] * vn[:, 0] + b1[:, None] * vn[:, 1] + b2[:, None] * vn[:, 2]
        return n / np.linalg.norm(n, axis=1, keepdims=True)


def _principal_frame(p: np.ndarray):
    c = p.mean(axis=0)
    _, _, vt = np.linalg.svd(p - c, full_matrices=False)
    if np.linalg.det(vt) < 0:
        vt[2] *= -1
    return c, vt


def _strided(p: np.ndarray, n: int | None) -> np.ndarray:
    if n is None or len(p) <= n:
        return p
    return p[np.linspace(0, len(p) - 1, n).astype(np.int64)]


def _initial_candidates(src: np.ndarray, tgt: np.ndarray):
    cands = [RigidTransform.identity()]
    cs, bs = _principal_frame(src)
    ct, bt = _principal_frame(tgt)
    for flips in ((1, 1, 1), (-1, -1, 1), (-1, 1, -1), (1, -1, -1)):
        r = bt.T @ np.diag(flips) @ bs
        cands.append(RigidTransform.from_rt(r, ct - r @ cs))
    return cands


def _trimmed(d, params: IcpParams, reject: float):
    ok = d <= reject
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return idx
    k = max(3, int(np.floor(params.trim_fraction * len(idx))))
    if k < len(idx):
        order = np.argsort(d[idx], kind="stable")[:k]
        idx = np.sort(idx[order])
    return idx


def _objective(d, idx):
    return float(np.sqrt(np.mean(d[idx] ** 2))) if len(idx) else np.inf


def _point_to_plane_step(p, q, n):
    c = p.mean(axis=0)
    pc = p - c
    a = np.hstack([np.cross(pc, n), n])
    b = np.einsum("ij,ij->i", q - p, n)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    rot = Rotation.from_rotvec(x[:3]).as_matrix()
    # small-angle solve is about the centroid; express it about the origin
    return RigidTransform.from_rt(rot, x[3:] + c - rot @ c)


def icp_align(source, target, params: IcpParams | None = None) -> AlignmentResult:
    """Trimmed ICP aligning ``source`` onto ``target``.

    ``source`` and ``target`` are meshes or (N, 3) point clouds. The recorded
    objective (RMS of trimmed closest-point distances) never increases: a
    point-to-plane step that would increase it is replaced by a point-to-point
    step, and iteration stops if neither improves. Against a mesh, a short
    warm-up on vertex correspondences precedes the exact closest-point phase;
    ``history`` covers the exact phase.
    """
    params = params or IcpParams()
    src_all = _as_points(source)
    if len(src_all) == 0:
        raise RegistrationError("empty source")
    src = _strided(src_all, params.sample_size)
    tgt = _Target(target)
    if len(tgt.points) == 0:
        raise RegistrationError("empty target")
    metric = params.metric if tgt.mesh is not None else POINT_TO_POINT

    if params.initial is not None:
        current = params.initial
    else:
        best = None
        # vertex distances are enough to rank the coarse candidates
        probe = _strided(src, 500)
        for cand in _initial_candidates(src_all, tgt.points):
            d, _ = tgt.tree.query(cand.apply(probe))
            score = _objective(d, _trimmed(d, params, np.inf))
            if best is None or score < best[0]:
                best = (score, cand)
        current = best[1]

    # far from the optimum, vertex correspondences are as good as exact ones and much cheaper
    if tgt.mesh is not None:
        current = _iterate(src, tgt, current, params, metric, exact=False,
                           max_iterations=min(30, params.max_iterations),
                           stop_rms=3.0 * tgt.edge_scale)[0]
    current, rms, it, idx, history = _iterate(src, tgt, current, params, metric, exact=True,
                                              max_iterations=params.max_iterations)
    inlier = len(idx) / len(src)
    return AlignmentResult(current, rms, max(it, 0), float(inlier), tuple(history))


def _iterate(src, tgt: _Target, current: RigidTransform, params: IcpParams, metric: str, exact: bool,
             max_iterations: int, stop_rms: float = 0.0):
    def evaluate(t: RigidTransform, reject: float):
        moved = t.apply(src)
        d, q, n = tgt.closest(moved, exact)
        idx = _trimmed(d, params, reject)
        return moved, d, q, n, idx

    moved = current.apply(src)
    d, q, n = tgt.closest(moved, exact)
    reject = max(params.rejection_distance, 3.0 * float(np.sqrt(np.mean(d ** 2))))
    idx = _trimmed(d, params, reject)
    if len(idx) < 3:
        raise RegistrationError("no correspondences within the rejection distance")
    rms = _objective(d, idx)
    history = [rms]
    it = 0
    for it in range(1, max_iterations + 1):
        steps = []
        if metric == POINT_TO_PLANE and n is not None:
            steps.append(lambda: _point_to_plane_step(moved[idx], q[idx], n[idx]))
        steps.append(lambda: fit_rigid(moved[idx], q[idx]))
        accepted = None
        for step in steps:
            try:
                delta = step()
            except (DegenerateConfigurationError, NotRigidError, np.linalg.LinAlgError):
                continue
            cand = delta @ current
            # objective measured on the same rejection radius for a fair comparison
            c_moved, c_d, c_q, c_n, c_idx = evaluate(cand, reject)
            c_rms = _objective(c_d, c_idx)
            if c_rms <= rms:
                accepted = (cand, c_moved, c_d, c_q, c_n, c_idx, c_rms)
                break
        if accepted is None:
            it -= 1
            break
        current, moved, d, q, n, idx, new_rms = accepted
        change = rms - new_rms
        rms = new_rms
        history.append(rms)
        new_reject = max(params.rejection_distance, 3.0 * rms)
        if new_reject < reject:
            reject = new_reject
            # same pose, same correspondences: only the trimming changes
            idx = _trimmed(d, params, reject)
            rms = min(rms, _objective(d, idx))
            history[-1] = rms
        if change < params.tolerance or rms < stop_rms:
            break
    return current, rms, it, idx, history


# -- therapeutic transform --------------------------------------------------------

@dataclass(frozen=True)
class ScanPairSet:
    """Arches in MI (reference frame, RCS) and TP (measurement frame, MCS)."""

    U0: TriangleMesh
    L0: TriangleMesh
    U1: TriangleMesh
    L1: TriangleMesh

    def __post_init__(self):
        for name in ("U0", "L0", "U1", "L1"):
            if getattr(self, name).is_empty:
                raise ValueError(f"{name} is empty")


@dataclass(frozen=True)
class TrackerRecord:
    """Mandibular-bow clouds in MI/TP plus face-scanner and dental-model calibrations."""

    B0: object
    B1: object
    T_F: RigidTransform
    T_D: RigidTransform

    def __post_init__(self):
        for name in ("T_F", "T_D"):
            if not isinstance(getattr(self, name), RigidTransform):
                raise NotRigidError(f"{name} must be a RigidTransform")


@dataclass(frozen=True)
class ScanEstimate:
    T: RigidTransform
    T_th: RigidTransform
    upper: AlignmentResult
    lower: AlignmentResult

    @property
    def diagnostics(self) -> dict:
        return {
            "upper_rms_mm": self.upper.rms,
            "upper_iterations": self.upper.iterations,
            "upper_inlier_fraction": self.upper.inlier_fraction,
            "lower_rms_mm": self.lower.rms,
            "lower_iterations": self.lower.iterations,
            "lower_inlier_fraction": self.lower.inlier_fraction,
        }


def estimate_tth_from_scans(scans: ScanPairSet, params: IcpParams | None = None,
                            max_upper_rms: float = 0.5) -> ScanEstimate:
    """Therapeutic transform from MI and TP scan pairs.

    1. ``T`` aligns the TP upper arch onto the MI upper arch.
    2. The TP lower arch is carried into the reference frame: ``L_th = T . L1``.
    3. ``T_th`` aligns ``L0`` onto ``L_th``.
    """
    params = params or IcpParams()
    upper = icp_align(scans.U1, scans.U0, params)
    if upper.rms > max_upper_rms:
        raise RegistrationError(
            f"upper-arch residual {upper.rms:.4f} mm exceeds {max_upper_rms} mm; "
            "the MI and TP upper scans do not look like the same anatomy")
    l_th = scans.L1.transformed(upper.transform)
    lower = icp_align(scans.L0, l_th, replace(params, initial=None))
    return ScanEstimate(upper.transform, lower.transform, upper, lower)


def tracker_frame_transform(T_F: RigidTransform, T_D: RigidTransform) -> RigidTransform:
    """Face-scanner to dental-model frame: ``T = T_D^-1 . T_F``."""
    return T_D.inverse() @ T_F


def tracker_stepwise(points, T_F: RigidTransform, T_D: RigidTransform, T_B: RigidTransform) -> np.ndarray:
    """Carry MI mandible points to TP step by step through the face-scanner frame."""
    t = tracker_frame_transform(T_F, T_D)
    in_fs = t.inverse().apply(points)
    moved_fs = T_B.apply(in_fs)
    return t.apply(moved_fs)


def tracker_conjugate(T_F: RigidTransform, T_D: RigidTransform, T_B: RigidTransform) -> RigidTransform:
    """Closed form of ``tracker_stepwise``: ``T_th = T . T_B . T^-1``."""
    t = tracker_frame_transform(T_F, T_D)
    return t @ T_B @ t.inverse()


def estimate_tth_from_tracker(record: TrackerRecord, L0: TriangleMesh | None = None,
                              params: IcpParams | None = None, max_bow_rms: float = 0.5):
    """Therapeutic transform from bow tracking. Returns ``(T_th, T_B, bow_alignment)``.

    ``L0`` is accepted for interface symmetry and sanity checks only: the
    result does not depend on the mandible geometry.
    """
    params = params or IcpParams()
    b0 = _as_points(record.B0)
    b1 = _as_points(record.B1)
    # a bow that spans no plane cannot pin down a rotation
    fit_rigid(b0, b0)
    fit_rigid(b1, b1)
    if len(b0) == len(b1):
        p = replace(params, metric=POINT_TO_POINT)
        bow = icp_align(b0, b1, p)
    else:
        bow = icp_align(record.B0, record.B1, params)
    if bow.rms > max_bow_rms:
        raise RegistrationError(f"bow residual {bow.rms:.4f} mm exceeds {max_bow_rms} mm")
    t_th = tracker_conjugate(record.T_F, record.T_D, bow.transform)
    if L0 is not None and L0.is_empty:
        raise ValueError("L0 is empty")
    return t_th, bow.transform, bow


# -- estimator wrappers ------------------------------------------------------------

class RigidRegistration(BaseEstimator):
    """ICP as an estimator: ``fit(source, target)`` learns ``transform_``."""

    def __init__(self, max_iterations=100, tolerance=1e-5, rejection_distance=2.0,
                 trim_fraction=0.9, metric=POINT_TO_PLANE, initial=None, sample_size=4000):
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.rejection_distance = rejection_distance
        self.trim_fraction = trim_fraction
        self.metric = metric
        self.initial = initial
        self.sample_size = sample_size

    def _params(self) -> IcpParams:
        return IcpParams(**self.get_params())

    def fit(self, source, target):
        res = icp_align(source, target, self._params())
        self.transform_ = res.transform
        self.rms_ = res.rms
        self.n_iter_ = res.iterations
        self.inlier_fraction_ = res.inlier_fraction
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        if isinstance(X, TriangleMesh):
            return X.transformed(self.transform_)
        return self.transform_.apply(_as_points(X))


class ScanTransformEstimator(RigidRegistration):
    """``fit(ScanPairSet)`` learns the therapeutic transform ``therapeutic_``."""

    def __init__(self, max_iterations=100, tolerance=1e-5, rejection_distance=2.0,
                 trim_fraction=0.9, metric=POINT_TO_PLANE, initial=None, sample_size=4000, max_upper_rms=0.5):
        super().__init__(max_iterations, tolerance, rejection_distance, trim_fraction, metric, initial,
                         sample_size)
        self.max_upper_rms = max_upper_rms

    def _params(self) -> IcpParams:
        p = self.get_params()
        p.pop("max_upper_rms")
        return IcpParams(**p)

    def fit(self, scans: ScanPairSet, y=None):
        est = estimate_tth_from_scans(scans, self._params(), self.max_upper_rms)
        self.upper_transform_ = est.T
        self.therapeutic_ = est.T_th
        self.transform_ = est.T_th
        self.diagnostics_ = est.diagnostics
        return self


class TrackerTransformEstimator(RigidRegistration):
    """``fit(TrackerRecord)`` learns ``therapeutic_`` and the bow motion ``bow_transform_``."""

    def __init__(self, max_iterations=100, tolerance=1e-5, rejection_distance=2.0,
                 trim_fraction=0.9, metric=POINT_TO_PLANE, initial=None, sample_size=4000, max_bow_rms=0.5):
        super().__init__(max_iterations, tolerance, rejection_distance, trim_fraction, metric, initial,
                         sample_size)
        self.max_bow_rms = max_bow_rms

    def _params(self) -> IcpParams:
        p = self.get_params()
        p.pop("max_bow_rms")
        return IcpParams(**p)

    def fit(self, record: TrackerRecord, y=None):
        t_th, t_b, bow = estimate_tth_from_tracker(record, None, self._params(), self.max_bow_rms)
        self.therapeutic_ = t_th
        self.transform_ = t_th
        self.bow_transform_ = t_b
        self.rms_ = bow.rms
        return self
