import numpy as np
import pytest

import oracles
from occlusplint.mesh import Plane, RigidTransform, meshes_intersect, min_distance
from occlusplint.mesh.shapes import grid_surface
from occlusplint.splint import (DesignCase, InfeasibleTransformError, SplintBuilder, SplintError, SplintParams,
                                assemble_splint, build_inner_surface, build_outer_shell, build_splint,
                                check_feasibility, clean_stamp, emboss, make_stamp, resolve_conflicts)
from occlusplint.synthkit import ArchSpec, make_arch_pair

R = 0.1
FLAT = Plane((0, 0, 1), 0.5)


@pytest.fixture(scope="module")
def mid_arch():
    return make_arch_pair(ArchSpec(resolution=0.8))


def _design(a, T, occlusal=True):
    return DesignCase(a.maxilla, a.mandible, T, occlusal=a.occlusal if occlusal else None,
                      crown_mask=a.crown_mask if occlusal else None, cutting_plane=a.cutting_plane)


def _flat_crown(half=5.0, n=41):
    x = np.linspace(-half, half, n)
    return grid_surface(x, x, np.zeros((n, n)), flip=True)


def _patch(half=1.0, z=0.0, n=9):
    s = np.linspace(-half, half, n)
    return grid_surface(s, s, np.full((n, n), z))


def _flat_parts(**kw):
    p = SplintParams(resolution=R, wall_thickness=1.5, clearance=0.1, cutting_plane=FLAT, **kw)
    inner = build_inner_surface(_flat_crown(), p)
    return p, inner, build_outer_shell(inner, p)


# -- parameters and gating -------------------------------------------------------

def test_params_validation():
    with pytest.raises(ValueError):
        SplintParams(resolution=1.0, wall_thickness=1.5)
    with pytest.raises(ValueError):
        SplintParams(resolution=0.0)
    with pytest.raises(ValueError):
        SplintParams(clearance=-0.1)
    assert SplintParams().to_dict()["wall_thickness"] == 1.5


def test_feasibility_named_constraints(mid_arch):
    ok = check_feasibility(_design(mid_arch, RigidTransform.from_translation((0, 0, -1.8))))
    assert ok.feasible and ok.failed == []
    assert ok["tmj"].passed is None
    tight = check_feasibility(_design(mid_arch, RigidTransform.from_translation((0, 0, -0.5))))
    assert tight.failed == ["clearance"]
    assert tight["clearance"].value == pytest.approx(
        min_distance(mid_arch.maxilla, mid_arch.mandible.transformed(RigidTransform.from_translation((0, 0, -0.5)))))
    twisted = check_feasibility(_design(mid_arch, RigidTransform.from_axis_angle((1, 0, 0), 15.0, (0, 5, -6))))
    assert "rotation" in twisted.failed
    text = twisted.format()
    assert "rotation" in text and "infeasible" in text
    assert twisted.to_dict()["feasible"] is False


def test_infeasible_build_and_override(mid_arch):
    case = _design(mid_arch, RigidTransform.from_translation((0, 0, -0.8)))
    p = SplintParams(resolution=0.3)
    with pytest.raises(InfeasibleTransformError) as info:
        build_splint(case, p)
    assert info.value.stage == "feasibility" and info.value.report.failed == ["clearance"]
    model = build_splint(case, p, override_feasibility=True)
    assert model.mesh.is_watertight
    assert model.provenance["override_feasibility"] is True
    assert any("clearance" in w for w in model.provenance["warnings"])


# -- stamp -----------------------------------------------------------------------

def test_stamp_orientation_and_closure():
    p = SplintParams(resolution=R, cutting_plane=FLAT, contact_gap=0.05)
    st = make_stamp(_patch().flipped(), RigidTransform.from_translation((0, 0, -1)), p)
    assert np.all(st.contact.face_normals @ st.press_direction > 0.99)
    assert np.allclose(st.contact.vertices[:, 2], -0.95)
    assert st.mesh.is_watertight
    assert st.mesh.volume == pytest.approx(4.0 * p.stamp_depth)


def test_clean_stamp_drops_small_components():
    from occlusplint.mesh.core import concatenate
    p = SplintParams(resolution=R, cutting_plane=FLAT, stamp_min_area=1.0)
    big, small = _patch(1.0), _patch(0.2).with_vertices(_patch(0.2).vertices + [5, 0, 0])
    st = clean_stamp(make_stamp(concatenate([big, small]), RigidTransform.identity(), p), p)
    assert st.component_areas == [pytest.approx(4.0)]
    with pytest.raises(SplintError) as info:
        clean_stamp(make_stamp(small, RigidTransform.identity(), p), p)
    assert info.value.stage == "clean_stamp"


# -- surfaces --------------------------------------------------------------------

def test_offsets_on_flat_crown():
    p, inner, outer = _flat_parts()
    core = inner.present
    core[:25] = core[-25:] = False
    core[:, :25] = core[:, -25:] = False
    assert np.allclose(inner.values[core], -0.1)
    assert np.allclose(outer.values[core], -1.6)


def test_shallow_emboss_is_a_dimple():
    p, inner, outer = _flat_parts()
    st = make_stamp(_patch(z=-1.2), RigidTransform.identity(), p)
    shell = emboss(outer, st)
    changed = shell.values != outer.values
    assert changed.any()
    assert np.allclose(shell.values[changed], -1.2)
    s, i, loops = resolve_conflicts(shell, inner, p)
    assert loops == []
    m = assemble_splint(i, s, loops, p)
    assert m.mesh.is_watertight and m.mesh.euler_characteristic == 2
    assert oracles.is_closed_manifold(m.mesh.triangles)


def test_emboss_without_fill_never_adds_material():
    p, inner, outer = _flat_parts()
    st = make_stamp(_patch(z=-3.0), RigidTransform.identity(), p)
    assert np.array_equal(emboss(outer, st).values, outer.values)
    filled = emboss(outer, st, fill=True)
    assert filled.values.min() == pytest.approx(-3.0)


def test_deep_emboss_opens_aperture():
    p, inner, outer = _flat_parts()
    st = make_stamp(_patch(z=1.0), RigidTransform.identity(), p)
    s, i, loops = resolve_conflicts(emboss(outer, st), inner, p)
    assert len(loops) == 1
    m = assemble_splint(i, s, loops, p)
    assert m.mesh.is_watertight and m.mesh.euler_characteristic == 0


def test_aperture_limit_is_a_stage_error():
    p, inner, outer = _flat_parts(max_aperture_fraction=0.01)
    st = make_stamp(_patch(half=3.0, z=1.0), RigidTransform.identity(), p)
    with pytest.raises(SplintError) as info:
        resolve_conflicts(emboss(outer, st), inner, p)
    assert info.value.stage == "resolve_conflicts"


def test_wrong_press_direction():
    p, inner, outer = _flat_parts()
    st = make_stamp(_patch(z=-1.2), RigidTransform.identity(), p, direction=(1, 0, 0))
    with pytest.raises(SplintError):
        emboss(outer, st)


def test_inner_surface_errors():
    p = SplintParams(resolution=R, cutting_plane=Plane((0, 0, 1), -5.0))
    with pytest.raises(SplintError) as info:
        build_inner_surface(_flat_crown(), p)
    assert info.value.stage == "build_inner_surface"


# -- full pipeline ---------------------------------------------------------------

@pytest.mark.parametrize("with_occlusal", [True, False])
def test_build_coarse_arch(mid_arch, with_occlusal):
    T = RigidTransform.from_translation((0, 0.3, -1.8))
    model = build_splint(_design(mid_arch, T, with_occlusal), SplintParams(resolution=0.3))
    assert model.mesh.is_watertight
    assert not meshes_intersect(model.mesh, mid_arch.mandible.transformed(T), 0.0)
    prov = model.provenance
    assert prov["runtime_s"] > 0 and "assemble_splint" in prov["stage_seconds"]
    assert prov["T_th"] == T.to_flat()
    assert len(prov["inputs"]["maxilla"]) == 64


def test_build_is_deterministic(mid_arch):
    T = RigidTransform.from_translation((0, 0, -1.8))
    a = build_splint(_design(mid_arch, T), SplintParams(resolution=0.3)).mesh
    b = build_splint(_design(mid_arch, T), SplintParams(resolution=0.3)).mesh
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.triangles, b.triangles)


def test_builder_estimator(mid_arch):
    from sklearn.base import clone
    b = SplintBuilder(resolution=0.3)
    assert clone(b).get_params()["resolution"] == 0.3
    b.fit(_design(mid_arch, RigidTransform.from_translation((0, 0, -1.8))))
    assert b.splint_.mesh.is_watertight and b.feasibility_["feasible"]
    assert b.transform(None) is b.splint_.mesh
