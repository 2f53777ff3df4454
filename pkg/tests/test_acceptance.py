"""Acceptance suite: one check per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the terminal
summary) or ``python tests/test_acceptance.py``.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

import oracles
from occlusplint import cli
from occlusplint.accuracy import STAGES, aggregate, read_stage_csv, stage_pipeline
from occlusplint.mesh import Plane, RigidTransform
from occlusplint.mesh.shapes import grid_surface
from occlusplint.registration import (decompose_error, estimate_tth_from_scans, tracker_conjugate,
                                      tracker_stepwise)
from occlusplint.splint import (DesignCase, SplintParams, assemble_splint, build_inner_surface, build_outer_shell,
                                build_splint, check_feasibility, emboss, make_stamp, resolve_conflicts)
from occlusplint.synthkit import (ArchSpec, ScenarioSpec, default_study_specs, make_arch_pair,
                                  make_scan_pair_scenario, make_study)

HERE = Path(__file__).parent
RESULTS = {}


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    assert ok, detail


# -- 1: published-table aggregation ------------------------------------------------

PRINTED = {   # weighted mean, pooled STD as printed under each table
    "splint_vs_model": (0.0119, 0.123),
    "maxilla_vs_model": (0.0050, 0.206),
    "mandible_vs_model": (0.0209, 0.127),
    "maxillary_clearance": (0.0245, 0.270),
    "mandibular_sliding": (-0.0059, 0.199),
    "mandibular_transformation": (0.0068, 0.265),
}


def test_criterion_1_table_aggregation():
    t0 = time.perf_counter()
    bad, rows = [], []
    for stage, (avg, std) in PRINTED.items():
        labels, stats, _ = read_stage_csv(HERE / "fixtures" / "published_tables" / f"{stage}.csv")
        s = aggregate(stats, labels)
        rows.append(f"{stage} {s.weighted_mean:+.4f}/{s.pooled_std:.4f}")
        if abs(s.weighted_mean - avg) > 5e-4 or abs(s.pooled_std - std) > 5e-4:
            bad.append(f"{stage}: got {s.weighted_mean:+.4f}/{s.pooled_std:.4f}, printed {avg:+.4f}/{std:.3f}")
    dt = time.perf_counter() - t0
    record(1, not bad and dt < 1.0, f"{dt:.2f} s; " + ("; ".join(bad) if bad else ", ".join(rows)))


# -- 2: scan-pair closed loop ---------------------------------------------------------

def test_criterion_2_scan_closed_loop(arch):
    t0 = time.perf_counter()
    errs = {0.0: [], 0.05: []}
    for noise in errs:
        for seed in range(20):
            T_true = RigidTransform.random(np.random.default_rng(100 + seed), 5.0, 3.0)
            sc = make_scan_pair_scenario(ScenarioSpec(T_true=T_true, seed=seed, noise=noise), arch)
            est = estimate_tth_from_scans(sc.scans)
            errs[noise].append(decompose_error(est.T_th @ T_true.inverse()))
    dt = time.perf_counter() - t0
    exact = np.array(errs[0.0])
    noisy = np.array(errs[0.05])
    rot0, tr0 = np.radians(exact[:, 0]).max(), exact[:, 1].max()
    rot95, tr95 = np.percentile(noisy[:, 0], 95), np.percentile(noisy[:, 1], 95)
    ok = rot0 < 1e-6 and tr0 < 1e-6 and rot95 < 0.1 and tr95 < 0.1 and dt < 60
    record(2, ok, f"zero noise max {rot0:.1e} rad / {tr0:.1e} mm; 0.05 mm noise p95 {rot95:.4f} deg / "
                  f"{tr95:.4f} mm; {dt:.1f} s")


# -- 3: tracker algebra --------------------------------------------------------------

def test_criterion_3_tracker_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        T_F, T_D, T_B = (RigidTransform.random(rng, 180.0, 100.0) for _ in range(3))
        p = rng.uniform(-100, 100, size=(100, 3))
        diff = tracker_conjugate(T_F, T_D, T_B).apply(p) - tracker_stepwise(p, T_F, T_D, T_B)
        worst = max(worst, float(np.linalg.norm(diff, axis=1).max()))
    dt = time.perf_counter() - t0
    record(3, worst < 1e-9 and dt < 5, f"max discrepancy {worst:.1e} mm over 100 x 100; {dt:.2f} s")


# -- 4: feasibility gating ----------------------------------------------------------

def _oracle_gap(a, b):
    # vertex-to-triangle both ways; exact unless the closest pair is edge-edge
    return min(oracles.point_mesh_distance(a.vertices, b.vertices, b.triangles, 5.0).min(),
               oracles.point_mesh_distance(b.vertices, a.vertices, a.triangles, 5.0).min())


def test_criterion_4_feasibility_gating(coarse_arch):
    a = coarse_arch
    assert len(a.maxilla.triangles) <= 5000 and len(a.mandible.triangles) <= 5000
    hinge = RigidTransform.from_axis_angle((1, 0, 0), 12.0, center=(0.0, 30.0, 5.0))
    cases = {
        "compliant": (RigidTransform.from_translation((0.0, 0.3, -1.8)), set()),
        "clearance": (RigidTransform.from_translation((0.0, 0.0, -0.5)), {"clearance"}),
        # overlapping arches are also closer than 1 mm
        "intersection": (RigidTransform.from_translation((0.0, 0.0, 0.6)), {"intersection", "clearance"}),
        "rotation": (RigidTransform.from_translation((0.0, 0.0, -3.0)) @ hinge, {"rotation"}),
    }
    bad, notes = [], []
    for name, (T, expect) in cases.items():
        rep = check_feasibility(DesignCase(a.maxilla, a.mandible, T))
        moved = a.mandible.transformed(T)
        crossings = oracles.triangles_cross(a.maxilla.vertices, a.maxilla.triangles,
                                            moved.vertices, moved.triangles)
        gap = _oracle_gap(a.maxilla, moved) if crossings == 0 else 0.0
        alpha, _ = decompose_error(T)
        truth = {c for c, v in (("clearance", gap < 1.0), ("intersection", crossings > 0),
                                ("rotation", alpha > 10.0)) if v}
        if truth != expect:
            bad.append(f"{name}: oracle says {sorted(truth)}")
        if set(rep.failed) != expect:
            bad.append(f"{name}: flagged {rep.failed}, expected {sorted(expect)}")
        # the index may find an edge-edge pair closer than the vertex oracle, never a farther one
        if crossings == 0 and rep["clearance"].value > gap + 1e-9:
            bad.append(f"{name}: reported clearance {rep['clearance'].value:.4f} above oracle {gap:.4f}")
        notes.append(f"{name} -> {rep.failed or 'feasible'} (oracle gap {gap:.3f}, crossings {crossings})")
    record(4, not bad, "; ".join(bad or notes))


# -- 5: splint construction properties -------------------------------------------------

R, W, C = 0.1, 1.5, 0.1


@pytest.fixture(scope="module")
def full_splint(arch):
    T = RigidTransform.from_translation((0.0, 0.0, -2.0))
    case = DesignCase(arch.maxilla, arch.mandible, T, occlusal=arch.occlusal, crown_mask=arch.crown_mask,
                      cutting_plane=arch.cutting_plane)
    t0 = time.perf_counter()
    model = build_splint(case, SplintParams(resolution=R, wall_thickness=W, clearance=C))
    return model, T, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_splint_properties(arch, full_splint):
    model, T, runtime = full_splint
    M, g = model.mesh, model.grid
    zc = model.provenance["params"]["cutting_plane"]["offset"]
    loc = g.to_local(M.vertices)
    checks = {}
    checks["watertight"] = M.is_watertight and oracles.is_closed_manifold(M.triangles)

    # label vertices by the surface they came from; the flat cut face is neither
    di = oracles.point_mesh_distance(M.vertices, model.inner.vertices, model.inner.triangles, 0.3)
    do = oracles.point_mesh_distance(M.vertices, model.outer.vertices, model.outer.triangles, 0.3)
    cut = np.abs(loc[:, 2] - zc) < 1e-6
    inner_v, outer_v = (di < do) & ~cut, (do <= di) & ~cut
    inner_t = M.triangles[inner_v[M.triangles].all(axis=1)]
    cut_t = M.triangles[cut[M.triangles].all(axis=1)]

    # wall thickness: ray from the outer surface inwards to the first inner-surface hit;
    # rays leaving through the cut face first, or starting next to an aperture, are rim samples
    near_ap = ndimage.binary_dilation(model.aperture_mask, iterations=int(np.ceil(W / R)) + 1)
    i, j = g.column_of(M.vertices)
    inside = (i >= 0) & (j >= 0) & (i < g.shape[0]) & (j < g.shape[1])
    rim = np.zeros(len(M.vertices), dtype=bool)
    rim[inside] = near_ap[i[inside], j[inside]]
    pool = np.flatnonzero(outer_v & ~rim)
    samples = np.random.default_rng(0).choice(pool, min(3000, len(pool)), replace=False)
    inner_cast, cut_cast = oracles.Caster(M.vertices, inner_t), oracles.Caster(M.vertices, cut_t)
    vn = M.vertex_normals
    thick, rims = [], 0
    for k in samples:
        o, d = M.vertices[k], -vn[k]
        hi, hc = inner_cast.hits(o, d, 10.0), cut_cast.hits(o, d, 10.0)
        ti = hi[0] if len(hi) else np.inf
        tc = hc[hc > 1e-9][0] if (hc > 1e-9).any() else np.inf
        if tc < ti:
            rims += 1
            continue
        thick.append(ti)
    thick = np.array(thick)
    frac = float(np.mean(thick >= W - R))
    checks["thickness"] = frac >= 0.99

    mand = arch.mandible.transformed(T)
    checks["mandible"] = oracles.triangles_cross(M.vertices, M.triangles, mand.vertices, mand.triangles) == 0
    mx = arch.maxilla
    d = oracles.point_mesh_distance(M.vertices, mx.vertices, mx.triangles, 1.0)
    near = np.flatnonzero(d <= 1.0)
    odd = oracles.crossings_along(M.vertices[near], [0, 0, -1.0], mx.vertices, mx.triangles) % 2 == 1
    depth = float(d[near][odd].max()) if odd.any() else 0.0
    checks["maxilla"] = depth <= R

    occ = arch.occlusal.transformed(T)
    core = ndimage.binary_erosion(model.footprint, iterations=2) & \
        ~ndimage.binary_dilation(model.aperture_mask, iterations=2)
    oi, oj = g.column_of(occ.vertices)
    ok = (oi >= 0) & (oj >= 0) & (oi < g.shape[0]) & (oj < g.shape[1])
    ok[ok] &= core[oi[ok], oj[ok]]
    gap = model.provenance["params"].get("contact_gap", 0.0)
    dev = oracles.point_mesh_distance(occ.vertices[ok], M.vertices, M.triangles, 1.0)
    checks["occlusal"] = ok.sum() > 0 and dev.max() <= gap + 2 * R

    rng = np.random.default_rng(1)
    pick = rng.choice(len(inner_t), min(5000, len(inner_t)), replace=False)
    origins = M.vertices[inner_t[pick]].mean(axis=1)
    up = g.frame[2]
    origins = origins - 20.0 * up
    counts = oracles.crossings_along(origins, up, M.vertices, inner_t)
    checks["insertable"] = np.all(counts == 1)
    checks["runtime"] = runtime <= 180

    record(5, all(checks.values()),
           f"watertight {checks['watertight']}; thickness >= {W - R:.1f} at {frac:.2%} of {len(thick)} "
           f"({rims} rim samples); mandible crossings 0: {checks['mandible']}; maxilla depth {depth:.2e}; "
           f"occlusal max dev {dev.max():.1e} over {ok.sum()}; insertion rays single-crossing "
           f"{np.mean(counts == 1):.1%}; build {runtime:.0f} s; failed: "
           f"{[k for k, v in checks.items() if not v] or 'none'}")


# -- 6: aperture topology -----------------------------------------------------------

def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def test_criterion_6_aperture():
    x = np.linspace(-5, 5, 41)
    crown = grid_surface(x, x, np.zeros((41, 41)), flip=True)
    p = SplintParams(resolution=0.1, wall_thickness=W, clearance=C, cutting_plane=Plane((0, 0, 1), 0.5))
    inner = build_inner_surface(crown, p)
    outer = build_outer_shell(inner, p)
    shell0, inner0, loops0 = resolve_conflicts(outer, inner, p)
    plain = assemble_splint(inner0, shell0, loops0, p)
    s = np.linspace(-1, 1, 9)     # 2 x 2 mm footprint pressed 1 mm past the crown
    stamp = make_stamp(grid_surface(s, s, np.zeros((9, 9))), RigidTransform.identity(), p)
    shell, inner2, loops = resolve_conflicts(emboss(outer, stamp), inner, p)
    holed = assemble_splint(inner2, shell, loops, p)
    areas = [_polygon_area(lo) for lo, _ in loops]
    chi0, chi1 = plain.mesh.euler_characteristic, holed.mesh.euler_characteristic
    ok = (len(loops) == 1 and holed.mesh.is_watertight and oracles.is_closed_manifold(holed.mesh.triangles)
          and chi0 == 2 and chi1 == 0 and abs(areas[0] - 4.0) <= 0.8)
    record(6, ok, f"{len(loops)} aperture; chi {chi0} -> {chi1} (genus 0 -> {(2 - chi1) // 2}); "
                  f"rim area {areas[0] if areas else float('nan'):.3f} mm^2 vs 4")


# -- 7: six-stage closed loop --------------------------------------------------------

def _study(offsets):
    specs = default_study_specs(4, arch=ArchSpec(resolution=0.8), seating_offsets=offsets)
    study = make_study(specs, SplintParams(resolution=0.3))
    return study.cases, study.shared


def test_criterion_7_pipeline_closed_loop():
    clean = stage_pipeline(*_study({}))
    worst = 0.0
    for name in STAGES:
        for r in clean[name].results:
            s = getattr(r, "before", r)
            vals = [abs(s.AVG), s.STD] + ([r.alpha, r.t] if hasattr(r, "alpha") else [])
            worst = max(worst, max(vals))
    zero_ok = worst < 1e-6 and all(not clean[n].skipped for n in STAGES)
    hurt = stage_pipeline(*_study({2: RigidTransform.from_translation((0, 0, -0.3))}))
    found = {}
    for name in ("maxillary_clearance", "mandibular_transformation"):
        res = hurt[name]
        by_t = res.labels[int(np.argmax([r.t for r in res.results]))]
        found[name] = (res.outlier(), by_t, max(r.t for r in res.results))
    outlier_ok = all(o == "3" and t == "3" for o, t, _ in found.values())
    record(7, zero_ok and outlier_ok,
           f"clean study max |value| {worst:.1e}; offset case flagged at stage 4/6: "
           + ", ".join(f"{k} -> case {o} (t {tm:.3f} mm)" for k, (o, _, tm) in found.items()))


# -- 8: determinism ------------------------------------------------------------------

def _pipeline(root: Path):
    spec = root / "spec.json"
    spec.write_text(json.dumps({"arch": {"resolution": 1.2}}))
    assert cli.main(["synth", str(spec), "-o", str(root / "scn")]) == 0
    assert cli.main(["build", str(root / "scn" / "case.json"), "-o", str(root / "splint"),
                     "--set", "resolution=0.3"]) == 0
    assert cli.main(["synth", str(spec), "-o", str(root / "study"), "--cases", "2", "--noise", "0.05"]) == 0
    assert cli.main(["analyze", str(root / "study"), "-o", str(root / "report"), "--maps"]) == 0


def _snapshot(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        key = str(p.relative_to(root))
        if p.name == "provenance.json":
            prov = json.loads(p.read_text())
            for k in ("runtime_s", "stage_seconds"):   # wall-clock timings
                prov.pop(k, None)
            out[key] = json.dumps(prov, sort_keys=True).encode()
        else:
            out[key] = p.read_bytes()
    return out


def test_criterion_8_determinism(tmp_path, monkeypatch):
    snaps = []
    for threads in ("1", "2"):
        monkeypatch.setenv("OCCLUSPLINT_THREADS", threads)
        root = tmp_path / f"run{len(snaps)}"
        root.mkdir()
        _pipeline(root)
        snaps.append(_snapshot(root))
    base = snaps[0]
    diff = sorted({k for s in snaps[1:] for k in set(base) | set(s) if base.get(k) != s.get(k)})
    meshes = sum(k.endswith((".ply", ".stl")) for k in base)
    tables = sum(k.endswith(".csv") for k in base)
    record(8, not diff, f"{len(base)} files ({meshes} meshes, {tables} CSV) over threads 1/2; "
                        f"differing: {diff or 'none'}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
