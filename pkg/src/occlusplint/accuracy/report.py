"""CSV / PLY export of stage tables, distance maps, histograms, radar data and profiles."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..mesh import save_mesh
from .corrective import CorrectiveFit
from .pipeline import STAGE_TITLES, STAGES, StageResult, StudyReport
from .profiles import ProfileSection
from .stats import HIST_EDGES, DeviationStats, StudySummary, aggregate

BASE_COLUMNS = ["splint", "N", "AVG_mm", "STD_mm"]
FIT_COLUMNS = ["alpha_deg", "t_mm"]


def _f(x) -> str:
    out = f"{x:.4f}"
    return "0.0000" if out == "-0.0000" else out


def table_rows(labels, results, with_fit: bool | None = None, summary: StudySummary | None = None, fits=None):
    """Rows of a per-splint table (N, AVG, STD[, alpha, t]) with totals rows last.

    ``fits`` supplies ``(alpha, t)`` for plain :class:`DeviationStats` rows.
    """
    results = list(results)
    if with_fit is None:
        with_fit = fits is not None or any(isinstance(r, CorrectiveFit) for r in results)
    cols = BASE_COLUMNS + (FIT_COLUMNS if with_fit else [])
    rows = [cols]
    for k, (label, r) in enumerate(zip(labels, results)):
        s = r.before if isinstance(r, CorrectiveFit) else r
        row = [str(label), str(s.N), _f(s.AVG), _f(s.STD)]
        if with_fit:
            if isinstance(r, CorrectiveFit):
                row += [_f(r.alpha), _f(r.t)]
            elif fits is not None:
                row += [_f(fits[k][0]), _f(fits[k][1])]
            else:
                row += ["", ""]
        rows.append(row)
    if results:
        pad = [""] * (len(cols) - 4)
        summary = summary or _aggregate(labels, results)
        rows.append(["Total N", str(summary.total_n), "", ""] + pad)
        rows.append(["Weighted mean", "", _f(summary.weighted_mean), ""] + pad)
        rows.append(["Pooled STD", "", "", _f(summary.pooled_std)] + pad)
    return rows


def _aggregate(labels, results):
    return aggregate([r.before if isinstance(r, CorrectiveFit) else r for r in results], labels)


def _write_csv(path: Path, rows) -> Path:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"directory does not exist: {path.parent}")
    path.write_text(buf.getvalue())
    return path


def write_stage_csv(path, stage: StageResult | None = None, with_fit: bool | None = None) -> Path:
    if stage is None:
        return _write_csv(path, [BASE_COLUMNS + (FIT_COLUMNS if with_fit else [])])
    if with_fit is None:
        with_fit = STAGES.index(stage.name) >= 3 if stage.name in STAGES else None
    return _write_csv(path, table_rows(stage.labels, stage.results, with_fit, stage.summary))


def write_histogram_csv(path, stats: DeviationStats) -> Path:
    rows = [["lo_mm", "hi_mm", "count"]]
    for lo, hi, c in zip(HIST_EDGES[:-1], HIST_EDGES[1:], stats.hist_counts):
        rows.append([_edge(lo), _edge(hi), str(int(c))])
    return _write_csv(path, rows)


def _edge(x) -> str:
    return "-inf" if x == -np.inf else "inf" if x == np.inf else _f(x)


def write_radar_csv(path, summaries: dict) -> Path:
    """One row per stage: weighted mean AVG and pooled STD."""
    rows = [["stage", "weighted_mean_AVG_mm", "pooled_STD_mm", "total_N"]]
    for name, s in summaries.items():
        if s is not None:
            rows.append([STAGE_TITLES.get(name, name), _f(s.weighted_mean), _f(s.pooled_std), str(s.total_n)])
    return _write_csv(path, rows)


def write_profile_csv(path, section: ProfileSection) -> Path:
    rows = [["role", "polyline", "x", "y", "z"]]
    for role, lines in section.polylines.items():
        for k, p in enumerate(lines):
            pts = np.vstack([p.points, p.points[:1]]) if p.closed else p.points
            rows += [[role, str(k), _f(x), _f(y), _f(z)] for x, y, z in pts]
    return _write_csv(path, rows)


def write_distance_map(path, mesh, errors) -> Path:
    save_mesh(mesh, path, vertex_scalars={"deviation": np.nan_to_num(np.asarray(errors, float), nan=0.0)})
    return Path(path)


def export_report(report: StudyReport, outdir, profiles: dict | None = None) -> list[Path]:
    """Write every stage table, per-case histograms, radar data, kept maps and profiles.

    File names are stable so reruns overwrite identically.
    """
    outdir = Path(outdir)
    if not outdir.is_dir():
        raise OSError(f"output directory does not exist: {outdir}")
    written = []
    for i, name in enumerate(STAGES, 1):
        stage = report.stages.get(name)
        written.append(write_stage_csv(outdir / f"stage{i}_{name}.csv", stage, with_fit=i >= 4))
        if stage is None:
            continue
        for label, s in zip(stage.labels, stage.stats):
            written.append(write_histogram_csv(outdir / f"hist_stage{i}_{label}.csv", s))
        if stage.skipped:
            written.append(_write_csv(outdir / f"stage{i}_{name}_skipped.csv",
                                       [["splint", "reason"]] + [list(x) for x in stage.skipped]))
    written.append(write_radar_csv(outdir / "radar.csv", {k: v.summary for k, v in report.stages.items()}))
    for (stage, label), (mesh, errors) in sorted(report.maps.items()):
        i = STAGES.index(stage) + 1
        written.append(write_distance_map(outdir / f"map_stage{i}_{label}.ply", mesh, errors))
    for name, section in sorted((profiles or {}).items()):
        written.append(write_profile_csv(outdir / f"profile_{name}.csv", section))
    return written


def read_stage_csv(path):
    """Per-case rows of a stage table (totals rows ignored).

    Returns ``(labels, stats, fits)`` where ``fits`` holds ``(alpha, t)`` per
    row or is ``None`` when the table has no fit columns.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header[:4] != BASE_COLUMNS:
            raise ValueError(f"{path}: header must start with {','.join(BASE_COLUMNS)}")
        with_fit = header[4:6] == FIT_COLUMNS
        labels, stats, fits = [], [], []
        for line, row in enumerate(reader, 2):
            if not row or row[0] in ("Total N", "Weighted mean", "Pooled STD"):
                continue
            try:
                stats.append(DeviationStats(int(row[1]), float(row[2]), float(row[3])))
                if with_fit:
                    fits.append((float(row[4]), float(row[5])))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            labels.append(row[0])
    return labels, stats, (fits if with_fit else None)
