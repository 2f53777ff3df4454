import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occlusplint.mesh import NotRigidError, RigidTransform
from occlusplint.mesh.shapes import icosphere
from occlusplint.registration import (DegenerateConfigurationError, IcpParams, RegistrationError, RigidRegistration,
                                      ScanPairSet, ScanTransformEstimator, TrackerRecord, TrackerTransformEstimator,
                                      decompose_error, estimate_tth_from_scans, estimate_tth_from_tracker, fit_rigid,
                                      icp_align, tracker_conjugate, tracker_stepwise)
from occlusplint.synthkit import ScenarioSpec, make_scan_pair_scenario, make_tracker_scenario


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_fit_rigid_exact(seed):
    rng = np.random.default_rng(seed)
    T = RigidTransform.random(rng, 180, 50)
    p = rng.normal(size=(20, 3)) * 10
    est = fit_rigid(p, T.apply(p))
    assert est.allclose(T, 1e-8)


def test_fit_rigid_never_reflects(rng):
    p = rng.normal(size=(30, 3))
    mirrored = p * [1, 1, -1]
    est = fit_rigid(p, mirrored)
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_fit_rigid_degenerate():
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfigurationError):
        fit_rigid(line, line)
    with pytest.raises(DegenerateConfigurationError):
        fit_rigid(line[:2], line[:2])


def test_decompose_small_angle():
    T = RigidTransform.from_axis_angle((1, 2, 3), 1e-7, (3, 4, 0))
    a, t = decompose_error(T)
    assert a == pytest.approx(1e-7, rel=1e-6)
    assert t == pytest.approx(5.0)


def test_icp_recovers_offset_on_arch(arch):
    P = RigidTransform.from_axis_angle((0.3, 1, 0.2), 4.0, (1.0, -2.0, 0.5))
    res = icp_align(arch.maxilla.transformed(P), arch.maxilla,
                    IcpParams(initial=RigidTransform.identity(), tolerance=1e-10, max_iterations=200))
    a, t = decompose_error(res.transform @ P)
    assert a < 1e-5 and t < 1e-5
    assert np.all(np.diff(res.history) <= 1e-15)   # objective never increases


def test_icp_point_to_point_cloud(rng):
    s = icosphere(3, 10.0).vertices * [1.0, 0.8, 0.6]
    T = RigidTransform.from_axis_angle((0, 0, 1), 3.0, (0.2, 0.1, 0))
    res = icp_align(T.apply(s), s, IcpParams(initial=RigidTransform.identity(), tolerance=1e-12,
                                             max_iterations=300, trim_fraction=1.0))
    assert (res.transform @ T).allclose(RigidTransform.identity(), 1e-6)


def test_icp_errors(arch):
    with pytest.raises(RegistrationError):
        icp_align(np.zeros((0, 3)), arch.maxilla)
    with pytest.raises(RegistrationError):
        icp_align(arch.maxilla, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        IcpParams(trim_fraction=0.0)


def test_scan_pair_closed_loop(arch):
    T_true = RigidTransform.from_axis_angle((1, 0.2, 0), 3.0, (0.5, 1.0, -2.0))
    sc = make_scan_pair_scenario(ScenarioSpec(T_true=T_true, seed=3), arch)
    est = estimate_tth_from_scans(sc.scans, IcpParams(tolerance=1e-10, max_iterations=200))
    a, t = decompose_error(est.T_th @ T_true.inverse())
    assert np.radians(a) < 1e-6 and t < 1e-6
    assert est.diagnostics["upper_rms_mm"] < 1e-6


def test_mismatched_upper_scans_fail(arch):
    sc = make_scan_pair_scenario(ScenarioSpec(seed=1), arch)
    bogus = ScanPairSet(sc.scans.U0, sc.scans.L0, icosphere(3, 20.0), sc.scans.L1)
    with pytest.raises(RegistrationError):
        estimate_tth_from_scans(bogus, max_upper_rms=0.1)


def test_tracker_algebra(rng):
    for _ in range(20):
        T_F, T_D, T_B = (RigidTransform.random(rng, 180, 50) for _ in range(3))
        p = rng.uniform(-50, 50, size=(10, 3))
        assert np.allclose(tracker_conjugate(T_F, T_D, T_B).apply(p), tracker_stepwise(p, T_F, T_D, T_B),
                           atol=1e-9)


def test_tracker_identity_calibration_returns_bow_motion():
    sc = make_tracker_scenario(ScenarioSpec(seed=4), T_F=RigidTransform.identity(), T_D=RigidTransform.identity())
    t_th, t_b, _ = estimate_tth_from_tracker(sc.record)
    assert t_th.allclose(sc.T_B, 1e-8) and t_b.allclose(sc.T_B, 1e-8)


def test_tracker_scenario_closed_loop():
    sc = make_tracker_scenario(ScenarioSpec(seed=9))
    t_th, _, bow = estimate_tth_from_tracker(sc.record)
    assert t_th.allclose(sc.T_th, 1e-7)


def test_tracker_rejects_planar_bow_and_bad_calibration():
    flat = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
    with pytest.raises(DegenerateConfigurationError):
        estimate_tth_from_tracker(TrackerRecord(flat, flat, RigidTransform.identity(), RigidTransform.identity()))
    with pytest.raises(NotRigidError):
        TrackerRecord(flat, flat, np.eye(4), RigidTransform.identity())


def test_estimator_api(arch):
    from sklearn.base import clone
    P = RigidTransform.from_translation((0.5, 0, 0))
    reg = RigidRegistration(initial=RigidTransform.identity(), tolerance=1e-10)
    reg.fit(arch.maxilla.transformed(P), arch.maxilla)
    assert (reg.transform_ @ P).allclose(RigidTransform.identity(), 1e-6)
    assert clone(reg).get_params()["tolerance"] == 1e-10
    moved = reg.transform(P.apply(arch.maxilla.vertices[:10]))
    assert np.allclose(moved, arch.maxilla.vertices[:10], atol=1e-6)

    sc = make_scan_pair_scenario(ScenarioSpec(T_true=P, seed=2), arch)
    est = ScanTransformEstimator(tolerance=1e-10).fit(sc.scans)
    assert est.therapeutic_.allclose(P, 1e-6)
    tr = make_tracker_scenario(ScenarioSpec(seed=5))
    assert TrackerTransformEstimator().fit(tr.record).therapeutic_.allclose(tr.T_th, 1e-7)
