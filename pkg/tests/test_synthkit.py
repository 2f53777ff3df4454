import csv
import io

import numpy as np
import pytest

import oracles
from occlusplint.mesh import RigidTransform, meshes_intersect, min_distance
from occlusplint.synthkit import (ArchSpec, ScenarioSpec, SpecError, add_noise, default_study_specs, ledger_csv,
                                  make_arch_pair, make_scan_pair_scenario, make_tracker_scenario, spec_to_dict)


@pytest.mark.parametrize("kw", [dict(tooth_count=3), dict(gap=-1.0), dict(resolution=0.0),
                                dict(cusp_height=3.5), dict(jitter=0.6), dict(tooth_count=40)])
def test_arch_spec_validation(kw):
    with pytest.raises(SpecError):
        ArchSpec(**kw)


def test_scenario_spec_validation():
    with pytest.raises(SpecError):
        ScenarioSpec(noise=-0.1)
    with pytest.raises(SpecError):
        ScenarioSpec(bow_points=2)
    with pytest.raises(SpecError):
        default_study_specs(0)


def test_arch_pair_gap_and_masks(coarse_arch):
    a = coarse_arch
    assert a.gap == pytest.approx(0.3, abs=1e-6)
    assert min_distance(a.maxilla, a.mandible) == pytest.approx(0.3, abs=1e-6)
    assert not meshes_intersect(a.maxilla, a.mandible, 0.0)
    assert oracles.triangles_cross(a.maxilla.vertices, a.maxilla.triangles,
                                   a.mandible.vertices, a.mandible.triangles) == 0
    assert len(a.crown_mask) == len(a.palate_mask) == len(a.maxilla.triangles)
    assert not np.any(a.crown_mask & a.palate_mask)
    assert a.occlusal.area < a.maxilla.submesh(a.crown_mask).area
    # maxilla faces the mandible
    assert np.mean(a.maxilla.face_normals[:, 2]) < 0 < np.mean(a.mandible.face_normals[:, 2])


def test_arch_is_deterministic():
    s = ArchSpec(resolution=1.2)
    a, b = make_arch_pair(s), make_arch_pair(s)
    assert np.array_equal(a.maxilla.vertices, b.maxilla.vertices)
    c = make_arch_pair(ArchSpec(resolution=1.2, seed=1))
    assert not np.array_equal(a.maxilla.vertices, c.maxilla.vertices)
    assert spec_to_dict(s)["resolution"] == 1.2


def test_noise_level(coarse_arch, rng):
    n = add_noise(coarse_arch.maxilla, 0.05, rng)
    d = n.vertices - coarse_arch.maxilla.vertices
    assert d.std() == pytest.approx(0.05, rel=0.05)
    assert add_noise(coarse_arch.maxilla, 0.0, rng) is coarse_arch.maxilla


def test_scan_scenario_relations(coarse_arch):
    T = RigidTransform.from_translation((0, 0.5, -2.0))
    sc = make_scan_pair_scenario(ScenarioSpec(T_true=T, seed=7), coarse_arch)
    s = sc.scans
    assert np.allclose(sc.M.apply(s.U1.vertices), s.U0.vertices, atol=1e-9)
    assert np.allclose(sc.M.apply(s.L1.vertices), T.apply(s.L0.vertices), atol=1e-9)


def test_tracker_scenario_is_seeded():
    a = make_tracker_scenario(ScenarioSpec(seed=3))
    b = make_tracker_scenario(ScenarioSpec(seed=3))
    assert np.array_equal(a.record.B0, b.record.B0) and a.T_th.allclose(b.T_th, 0.0)


def test_study_specs_offsets():
    off = RigidTransform.from_translation((0, 0, -0.3))
    specs = default_study_specs(4, noise=0.02, seating_offsets={2: off})
    assert [s.seed for s in specs] == [0, 1, 2, 3]
    assert specs[2].seating_offset.allclose(off, 0.0)
    assert specs[0].seating_offset.allclose(RigidTransform.identity(), 0.0)
    assert len({tuple(s.T_true.to_flat()) for s in specs}) == 4


def test_ledger_csv():
    rows = [{"splint": "1", "stage": "x", "t_mm": 0.1 + 0.2}, {"splint": "2", "stage": "y", "t_mm": 0.0}]
    text = ledger_csv(rows)
    back = list(csv.DictReader(io.StringIO(text)))
    assert back[0]["t_mm"] == "0.3" and back[1]["stage"] == "y"
    assert ledger_csv([]) == ""
