"""Accuracy analysis: deviation maps, aggregation, corrective fits, six-stage protocol, reports."""

from .corrective import CorrectiveFit, fit_corrective
from .pipeline import STAGES, StageResult, StudyCase, StudyReport, stage_pipeline
from .profiles import ProfileSection, extract_profiles, profile_thickness
from .report import export_report, read_stage_csv, table_rows, write_radar_csv, write_stage_csv
from .stats import (AccuracyError, DeviationMap, DeviationStats, StudySummary, aggregate, deviation_map,
                    histogram)

__all__ = [
    "AccuracyError", "CorrectiveFit", "DeviationMap", "DeviationStats", "ProfileSection",
    "STAGES", "StageResult", "StudyCase", "StudyReport", "StudySummary", "aggregate",
    "deviation_map", "export_report", "extract_profiles", "fit_corrective", "histogram",
    "profile_thickness", "read_stage_csv", "stage_pipeline", "table_rows", "write_radar_csv", "write_stage_csv",
]
