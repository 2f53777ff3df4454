"""Signed deviation maps, per-case statistics and study-level aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import TriangleMesh

BIN_WIDTH = 0.02
HIST_EDGES = np.concatenate([[-np.inf], np.round(np.arange(-50, 51) * BIN_WIDTH, 10), [np.inf]])


class AccuracyError(RuntimeError):
    pass


def histogram(errors) -> np.ndarray:
    """Counts over ``HIST_EDGES``: 0.02 mm bins on [-1, 1] plus two overflow bins."""
    e = np.asarray(errors, dtype=np.float64)
    idx = np.searchsorted(HIST_EDGES, e, side="right") - 1
    return np.bincount(np.clip(idx, 0, len(HIST_EDGES) - 2), minlength=len(HIST_EDGES) - 1)


@dataclass(frozen=True)
class DeviationStats:
    N: int
    AVG: float
    STD: float
    hist_counts: np.ndarray | None = field(default=None, repr=False, compare=False)
    excluded: int = 0

    def __post_init__(self):
        if self.N <= 0:
            raise ValueError("N must be positive")
        if not self.STD >= 0:
            raise ValueError("STD must be >= 0")
        if self.hist_counts is not None and int(np.sum(self.hist_counts)) != self.N:
            raise ValueError("histogram counts must sum to N")

    @classmethod
    def from_errors(cls, errors, excluded: int = 0) -> "DeviationStats":
        e = np.asarray(errors, dtype=np.float64).ravel()
        if len(e) == 0:
            raise AccuracyError("no retained points")
        avg = math.fsum(e) / len(e)
        std = math.sqrt(math.fsum((e - avg) ** 2) / len(e))
        return cls(len(e), avg, std, histogram(e), int(excluded))

    @property
    def hist_edges(self) -> np.ndarray:
        return HIST_EDGES


@dataclass(frozen=True)
class DeviationMap:
    errors: np.ndarray = field(repr=False)     # per measured vertex; nan where excluded
    retained: np.ndarray = field(repr=False)
    stats: DeviationStats


def deviation_map(measured: TriangleMesh, reference: TriangleMesh, exclusion_distance: float | None = None,
                  peripheral: bool = False, peripheral_band: float = 1.0, vertex_mask=None) -> DeviationMap:
    """Signed distance of each measured vertex to the reference surface.

    Positive values lie on the outward side of the reference. Points farther
    than ``exclusion_distance`` are dropped; with ``peripheral`` so are points
    whose closest reference feature is within ``peripheral_band`` of an open
    boundary of the reference.
    """
    pts = measured.vertices if vertex_mask is None else measured.vertices[np.asarray(vertex_mask, bool)]
    if reference.is_empty or len(pts) == 0:
        raise AccuracyError("deviation map needs non-empty meshes")
    signed = reference.index.signed_distance(pts)
    keep = np.ones(len(pts), dtype=bool)
    if exclusion_distance is not None:
        keep &= np.abs(signed) <= exclusion_distance
    if peripheral:
        keep &= _boundary_distance(pts, reference) > peripheral_band
    if not keep.any():
        raise AccuracyError("all points excluded")
    errors = np.where(keep, signed, np.nan)
    return DeviationMap(errors, keep, DeviationStats.from_errors(signed[keep], excluded=int((~keep).sum())))


def _boundary_distance(pts, reference: TriangleMesh) -> np.ndarray:
    be = reference.boundary_edges
    if len(be) == 0:
        return np.full(len(pts), np.inf)
    a = reference.vertices[be[:, 0]]
    b = reference.vertices[be[:, 1]]
    # sample boundary edges densely enough for a band test
    step = 0.1 * max(1e-9, float(np.median(np.linalg.norm(b - a, axis=1))))
    n = np.maximum(1, np.ceil(np.linalg.norm(b - a, axis=1) / step).astype(int))
    t = np.concatenate([np.arange(k + 1) / k for k in n])
    rep = np.repeat(np.arange(len(be)), n + 1)
    samples = a[rep] + t[:, None] * (b[rep] - a[rep])
    return cKDTree(samples).query(pts)[0]


@dataclass(frozen=True)
class StudySummary:
    labels: tuple
    cases: tuple               # DeviationStats per case
    weighted_mean: float
    pooled_std: float
    total_n: int
    pooling: str = "total"


def aggregate(stats, labels=None, pooling: str = "total") -> StudySummary:
    """Weighted mean AVG and pooled STD over cases.

    ``pooling="total"`` pools the full point population,
    ``sqrt(sum N_i (STD_i^2 + (AVG_i - mean)^2) / sum N_i)``; ``"within"``
    drops the between-case term. Sums run in case order.
    """
    stats = list(stats)
    if not stats:
        raise AccuracyError("aggregate needs at least one case")
    if pooling not in ("total", "within"):
        raise ValueError("pooling must be 'total' or 'within'")
    labels = tuple(str(i + 1) for i in range(len(stats))) if labels is None else tuple(labels)
    if len(labels) != len(stats):
        raise ValueError("one label per case")
    n = [s.N for s in stats]
    total = sum(n)
    mean = math.fsum(k * s.AVG for k, s in zip(n, stats)) / total
    if pooling == "total":
        ss = math.fsum(k * (s.STD ** 2 + (s.AVG - mean) ** 2) for k, s in zip(n, stats))
    else:
        ss = math.fsum(k * s.STD ** 2 for k, s in zip(n, stats))
    return StudySummary(labels, tuple(stats), mean, math.sqrt(ss / total), total, pooling)
