import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occlusplint.accuracy import (STAGES, AccuracyError, DeviationStats, StudyCase, aggregate, deviation_map,
                                  export_report, extract_profiles, fit_corrective, histogram, profile_thickness,
                                  read_stage_csv, stage_pipeline, table_rows)
from occlusplint.accuracy.stats import HIST_EDGES
from occlusplint.mesh import Plane, RigidTransform
from occlusplint.mesh.shapes import grid_surface, icosphere
from occlusplint.registration import decompose_error
from occlusplint.splint import SplintParams
from occlusplint.synthkit import ArchSpec, default_study_specs, make_study


# -- statistics ------------------------------------------------------------------

def test_histogram_bins():
    assert len(HIST_EDGES) == 103
    h = histogram([-5.0, -1.0, -0.01, 0.0, 0.019, 0.02, 0.99, 1.0, 7.0])
    assert h.sum() == 9
    assert h[0] == 1 and h[-1] == 2          # overflow bins
    assert h[1] == 1                         # [-1, -0.98)
    assert h[50] == 1 and h[51] == 2         # [-0.02, 0) and [0, 0.02)


def test_stats_population_std():
    s = DeviationStats.from_errors([1.0, 2.0, 3.0, 4.0])
    assert s.N == 4 and s.AVG == 2.5 and s.STD == pytest.approx(math.sqrt(1.25))
    with pytest.raises(AccuracyError):
        DeviationStats.from_errors([])
    with pytest.raises(ValueError):
        DeviationStats(0, 0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=40), min_size=1, max_size=8))
def test_total_pooling_equals_population_of_all_points(groups):
    stats = [DeviationStats.from_errors(g) for g in groups]
    s = aggregate(stats)
    allp = np.concatenate([np.asarray(g, float) for g in groups])
    assert s.total_n == len(allp)
    assert s.weighted_mean == pytest.approx(allp.mean(), abs=1e-12)
    assert s.pooled_std == pytest.approx(allp.std(), abs=1e-9)


def test_within_pooling_and_errors():
    a, b = DeviationStats(10, 1.0, 0.5), DeviationStats(30, -1.0, 0.5)
    assert aggregate([a, b], pooling="within").pooled_std == pytest.approx(0.5)
    assert aggregate([a, b]).weighted_mean == pytest.approx(-0.5)
    with pytest.raises(AccuracyError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([a], pooling="median")


def test_deviation_map_offset_sphere():
    ref = icosphere(4, 5.0)
    meas = icosphere(4, 5.2)
    dm = deviation_map(meas, ref)
    assert dm.stats.AVG == pytest.approx(0.2, abs=0.01) and dm.stats.STD < 0.01
    assert deviation_map(meas, ref, exclusion_distance=0.3).stats.N == dm.stats.N
    assert deviation_map(ref, meas).stats.AVG == pytest.approx(-0.2, abs=0.01)
    with pytest.raises(AccuracyError):
        deviation_map(meas, ref, exclusion_distance=0.1)


def test_deviation_map_exclusion_and_periphery():
    x = np.linspace(-5, 5, 41)
    ref = grid_surface(x, x, np.zeros((41, 41)))
    meas = grid_surface(x, x, np.full((41, 41), 0.1))
    full = deviation_map(meas, ref)
    assert full.stats.N == 41 * 41 and full.stats.AVG == pytest.approx(0.1)
    core = deviation_map(meas, ref, peripheral=True, peripheral_band=1.0)
    assert core.stats.N < full.stats.N and core.stats.excluded == full.stats.N - core.stats.N
    with pytest.raises(AccuracyError):
        deviation_map(meas, ref, exclusion_distance=0.05)


# -- corrective fits -------------------------------------------------------------

def test_corrective_fit_recovers_known_motion(arch):
    P = RigidTransform.from_axis_angle((0.2, 1.0, 0.1), 0.2, (0.3, 0.0, 0.0))
    fit = fit_corrective(arch.maxilla.transformed(P), arch.maxilla, arch.palate_mask)
    a, t = decompose_error(fit.transform @ P)
    assert a < 1e-4 and t < 1e-4
    assert fit.alpha == pytest.approx(0.2, abs=1e-4)
    assert fit.objective_after <= fit.objective_before


def test_corrective_fit_identity_on_exact_data(arch):
    fit = fit_corrective(arch.maxilla, arch.maxilla)
    assert fit.alpha < 1e-9 and fit.t < 1e-9 and fit.before.STD == 0.0


def test_corrective_region_mask_length(arch):
    with pytest.raises(AccuracyError):
        fit_corrective(arch.maxilla, arch.maxilla, np.ones(3, bool))


# -- profiles ---------------------------------------------------------------------

def test_profile_thickness_between_spheres():
    sec = extract_profiles({"splint_outer": icosphere(4, 5.0), "splint_inner": icosphere(4, 3.0),
                            "mandible": None}, Plane((0, 0, 1), 0.3))
    assert set(sec.roles()) == {"splint_outer", "splint_inner"}
    th = profile_thickness(sec)
    assert np.all(np.abs(th - 2.0) < 0.02)
    moved = sec.transformed(RigidTransform.from_translation((1, 2, 3)))
    assert np.allclose(profile_thickness(moved), th)


# -- reports ---------------------------------------------------------------------

def test_table_rows_and_csv_round_trip(tmp_path):
    from occlusplint.accuracy.report import _write_csv
    stats = [DeviationStats(100, 0.01234, 0.1), DeviationStats(300, -0.00004, 0.2)]
    rows = table_rows(["a", "b"], stats, fits=[(0.1, 0.2), (0.3, 0.4)])
    assert rows[0] == ["splint", "N", "AVG_mm", "STD_mm", "alpha_deg", "t_mm"]
    assert rows[2][2] == "0.0000"            # no negative zero
    assert rows[-3][:2] == ["Total N", "400"]
    _write_csv(tmp_path / "t.csv", rows)
    labels, back, fits = read_stage_csv(tmp_path / "t.csv")
    assert labels == ["a", "b"] and fits == [(0.1, 0.2), (0.3, 0.4)]
    assert back[0].AVG == 0.0123


def test_read_stage_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y\n")
    with pytest.raises(ValueError):
        read_stage_csv(p)
    p.write_text("splint,N,AVG_mm,STD_mm\n1,abc,0,0\n")
    with pytest.raises(ValueError, match="bad.csv:2"):
        read_stage_csv(p)


# -- six-stage pipeline -----------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_study():
    specs = default_study_specs(2, arch=ArchSpec(resolution=0.8),
                                seating_offsets={1: RigidTransform.from_translation((0, 0, -0.3))})
    return make_study(specs, SplintParams(resolution=0.3))


def test_pipeline_zero_noise_with_offset(tiny_study, tmp_path):
    rep = stage_pipeline(tiny_study.cases, tiny_study.shared)
    for name in STAGES:
        stage = rep[name]
        assert not stage.skipped
        for s in stage.stats[:1]:
            assert abs(s.AVG) < 1e-6 and s.STD < 1e-6
    for name in ("maxillary_clearance", "mandibular_transformation"):
        assert rep[name].outlier() == "2"
        assert rep[name].results[1].t == pytest.approx(0.3, abs=1e-3)
    truth = {(r["splint"], r["stage"]): r for r in tiny_study.ledger}
    for name in STAGES[3:]:
        for label, fit in zip(rep[name].labels, rep[name].results):
            assert fit.t == pytest.approx(truth[label, name]["t_mm"], abs=1e-4)
            assert fit.before.AVG == pytest.approx(truth[label, name]["AVG_mm"], abs=1e-4)
    written = export_report(rep, tmp_path)
    names = {p.name for p in written}
    assert "radar.csv" in names and "stage6_mandibular_transformation.csv" in names
    with open(tmp_path / "stage4_maxillary_clearance.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][-2:] == ["alpha_deg", "t_mm"] and rows[-1][0] == "Pooled STD"


def test_pipeline_skips_missing_inputs(tiny_study):
    c = tiny_study.cases[0]
    bare = StudyCase(c.label, c.T_th, splint_model=c.splint_model, splint_scan=c.splint_scan)
    rep = stage_pipeline([bare], stages=("splint_vs_model", "maxilla_vs_model"))
    assert rep["splint_vs_model"].labels == ("1",)
    assert rep["maxilla_vs_model"].skipped[0][0] == "1"
    assert "missing" in rep["maxilla_vs_model"].skipped[0][1]
    assert rep["maxilla_vs_model"].summary is None


def test_pipeline_chains_agree(tiny_study):
    a = stage_pipeline(tiny_study.cases, tiny_study.shared, stages=("maxillary_clearance",))
    b = stage_pipeline(tiny_study.cases, tiny_study.shared, stages=("maxillary_clearance",), chain="maxilla")
    for x, y in zip(a["maxillary_clearance"].results, b["maxillary_clearance"].results):
        assert x.t == pytest.approx(y.t, abs=2e-3)
    with pytest.raises(ValueError):
        stage_pipeline(tiny_study.cases, chain="mandible")
