"""Command-line entry point: ``occlusplint {estimate,build,analyze,synth}``.

Exit codes: 0 success, 1 input error, 2 registration failure, 3 infeasible
transform, 4 build-stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .casefiles import (CaseFileError, coerce_params, dump_json, load_case, load_study, plane_to_json, read_json,
                        read_transform, save_mask, save_study, transform_from_json, transform_to_json)
from .mesh import MeshError, load_mesh, save_mesh
from .mesh.transform import NotRigidError
from .registration import (IcpParams, RegistrationError, ScanPairSet, TrackerRecord, decompose_error,
                           estimate_tth_from_scans, estimate_tth_from_tracker)

log = logging.getLogger("occlusplint")

EXIT_OK, EXIT_INPUT, EXIT_REGISTRATION, EXIT_INFEASIBLE, EXIT_STAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _f(x) -> str:
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _points(path) -> np.ndarray:
    """A point cloud from a mesh file (its vertices) or a whitespace/comma separated table."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    if p.suffix.lower() in (".stl", ".ply", ".obj"):
        return load_mesh(p).vertices
    if p.suffix.lower() == ".npy":
        pts = np.load(p, allow_pickle=False)
    else:
        text = p.read_text().replace(",", " ")
        pts = np.loadtxt(text.splitlines(), ndmin=2)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise CaseFileError(f"{p}: expected an (N, 3) point table")
    return np.asarray(pts, dtype=np.float64)


# -- estimate --------------------------------------------------------------------

def cmd_estimate(args) -> int:
    params = coerce_params(IcpParams(), _overrides(args.set), "--set")
    if args.mode == "scans":
        if not (args.mi and args.tp):
            raise UsageError("scans mode needs --mi U0 L0 and --tp U1 L1")
        scans = ScanPairSet(*(load_mesh(p) for p in (*args.mi, *args.tp)))
        est = estimate_tth_from_scans(scans, params)
        T_th, diag = est.T_th, est.diagnostics
        extra = {"T_registration": transform_to_json(est.T)}
    else:
        if not (args.bow and args.tf and args.td):
            raise UsageError("tracker mode needs --bow B0 B1, --tf and --td")
        record = TrackerRecord(_points(args.bow[0]), _points(args.bow[1]),
                               read_transform(args.tf), read_transform(args.td))
        T_th, T_B, bow = estimate_tth_from_tracker(record, params=params)
        diag = {"bow_rms_mm": bow.rms, "bow_iterations": bow.iterations,
                "bow_inlier_fraction": bow.inlier_fraction}
        extra = {"T_B": transform_to_json(T_B)}
    alpha, t = decompose_error(T_th)
    out = {"T_th": transform_to_json(T_th), "mode": args.mode, "rotation_deg": alpha, "translation_mm": t,
           "diagnostics": diag, **extra}
    if args.out:
        dump_json(out, args.out)
    print(f"T_th rotation {_f(alpha)} deg, translation {_f(t)} mm")
    for k, v in diag.items():
        print(f"  {k}: {_f(v) if isinstance(v, float) else v}")
    return EXIT_OK


# -- build -----------------------------------------------------------------------

def cmd_build(args) -> int:
    from .splint import InfeasibleTransformError, SplintError, build_splint
    case, params = load_case(args.case)
    params = coerce_params(params, _overrides(args.set), "--set")
    out = _outdir(args.out)
    try:
        model = build_splint(case, params, override_feasibility=args.override_feasibility)
    except InfeasibleTransformError as exc:
        print(exc.report.format())
        dump_json(exc.report.to_dict(), out / "feasibility.json")
        print(f"infeasible: {', '.join(exc.report.failed)} (use --override-feasibility to build anyway)",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    except SplintError as exc:
        print(f"stage {exc.stage} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    save_mesh(model.mesh, out / "splint.stl")
    dump_json(model.provenance["feasibility"], out / "feasibility.json")
    dump_json(model.provenance, out / "provenance.json")
    for w in model.provenance["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"splint: {len(model.mesh.triangles)} triangles, {model.provenance['apertures']} apertures, "
          f"{model.provenance['runtime_s']:.1f} s -> {out / 'splint.stl'}")
    return EXIT_OK


# -- analyze ---------------------------------------------------------------------

def _print_table(title, rows):
    print(title)
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  " + "  ".join(str(c).rjust(w) for c, w in zip(r, widths)))


def _analyze_tables(src: Path, out: Path, pooling: str) -> int:
    """Aggregate per-case stage CSVs (e.g. typed from published tables)."""
    from .accuracy import STAGES, aggregate, read_stage_csv, table_rows, write_radar_csv
    from .accuracy.report import _write_csv
    order = {name: i for i, name in enumerate(STAGES)}
    files = sorted(src.glob("*.csv"), key=lambda f: (min((order[s] for s in STAGES if s in f.stem), default=99),
                                                     f.name))
    if not files:
        raise CaseFileError(f"{src}: no study.json and no stage CSV files")
    summaries = {}
    for f in files:
        labels, stats, fits = read_stage_csv(f)
        if not stats:
            print(f"{f.stem}: no rows, skipped")
            continue
        summary = aggregate(stats, labels, pooling=pooling)
        rows = table_rows(labels, stats, with_fit=fits is not None, summary=summary, fits=fits)
        _write_csv(out / f.name, rows)
        _print_table(f.stem, rows)
        key = next((s for s in STAGES if s in f.stem), f.stem)
        summaries[key] = summary
    write_radar_csv(out / "radar.csv", summaries)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .accuracy import STAGES, export_report, stage_pipeline, table_rows
    from .accuracy.pipeline import STAGE_TITLES
    src = Path(args.study)
    if not src.is_dir():
        raise FileNotFoundError(f"file not found: {src}")
    out = _outdir(args.out)
    if not (src / "study.json").is_file():
        return _analyze_tables(src, out, args.pooling)
    cases, shared = load_study(src)
    if not cases:
        raise CaseFileError(f"{src}: empty study")
    report = stage_pipeline(cases, shared, chain=args.chain, keep_maps=args.maps)
    export_report(report, out)
    for i, name in enumerate(STAGES, 1):
        stage = report.stages[name]
        if stage.results:
            rows = table_rows(stage.labels, stage.results, with_fit=i >= 4, summary=stage.summary)
            _print_table(f"stage {i}: {STAGE_TITLES[name]}", rows)
        for label, reason in stage.skipped:
            print(f"stage {i} ({name}): case {label} skipped: {reason}")
    return EXIT_OK


# -- synth -----------------------------------------------------------------------

def _synth_spec(args):
    from .mesh import RigidTransform
    from .synthkit import ArchSpec, ScenarioSpec, SpecError
    data = read_json(args.spec) if args.spec else {}
    known = {"arch", "T_true", "noise", "seed", "seating_offsets", "sliding_offsets", "cases"}
    unknown = set(data) - known
    if unknown:
        raise CaseFileError(f"{args.spec}: unknown keys {sorted(unknown)}")
    try:
        arch = coerce_params(ArchSpec(), data.get("arch", {}), "arch")
    except SpecError as exc:
        raise CaseFileError(f"arch: {exc}") from exc
    noise = args.noise if args.noise is not None else float(data.get("noise", 0.0))
    seed = args.seed if args.seed is not None else int(data.get("seed", 0))
    cases = args.cases if args.cases is not None else data.get("cases")
    T_true = transform_from_json(data["T_true"], "T_true") if "T_true" in data else \
        RigidTransform.from_axis_angle((1, 0, 0), 1.0, (0.0, 0.3, -2.0))

    def offsets(key):
        raw = data.get(key, {})
        if not isinstance(raw, dict):
            raise CaseFileError(f"{key}: expected an object keyed by case index")
        return {int(k): transform_from_json(v, f"{key}[{k}]") for k, v in raw.items()}
    return arch, T_true, noise, seed, cases, offsets("seating_offsets"), offsets("sliding_offsets"), ScenarioSpec


def _write_arch(arch, out: Path, T_th):
    save_mesh(arch.maxilla, out / "maxilla.ply")
    save_mesh(arch.mandible, out / "mandible.ply")
    save_mesh(arch.occlusal, out / "occlusal.ply")
    save_mask(arch.crown_mask, out / "crown_mask.npy")
    dump_json({"maxilla": "maxilla.ply", "mandible": "mandible.ply", "occlusal": "occlusal.ply",
               "crown_mask": "crown_mask.npy", "cutting_plane": plane_to_json(arch.cutting_plane),
               "T_th": transform_to_json(T_th)}, out / "case.json")


def cmd_synth(args) -> int:
    from dataclasses import replace
    from .synthkit import (SpecError, default_study_specs, ledger_csv, make_arch_pair, make_scan_pair_scenario,
                           make_study, make_tracker_scenario, spec_to_dict)
    arch_spec, T_true, noise, seed, cases, seat, slide, ScenarioSpec = _synth_spec(args)
    out = _outdir(args.out)
    try:
        if cases is None:
            spec = ScenarioSpec(arch_spec, T_true, noise, seed=seed)
            arch = make_arch_pair(arch_spec)
            sc = make_scan_pair_scenario(spec, arch)
            _write_arch(arch, out, T_true)
            for name in ("U0", "L0", "U1", "L1"):
                save_mesh(getattr(sc.scans, name), out / f"{name}.ply")
            tr = make_tracker_scenario(spec)
            for name, pts in (("bow_mi.csv", tr.record.B0), ("bow_tp.csv", tr.record.B1)):
                (out / name).write_text("".join(",".join(repr(float(x)) for x in p) + "\n" for p in pts))
            dump_json(transform_to_json(tr.record.T_F), out / "T_F.json")
            dump_json(transform_to_json(tr.record.T_D), out / "T_D.json")
            rows = [{"item": "T_true", **_flat(T_true)}, {"item": "scanner_frame", **_flat(sc.M)},
                    {"item": "T_B", **_flat(tr.T_B)}, {"item": "tracker_T_th", **_flat(tr.T_th)}]
            for r in rows:
                r.update(noise_mm=float(noise), seed=int(seed))
            (out / "ledger.csv").write_text(ledger_csv(rows))
            dump_json(spec_to_dict(arch_spec), out / "arch_spec.json")
            print(f"scenario written to {out}")
            return EXIT_OK
        specs = default_study_specs(int(cases), noise, arch_spec, seed, seat)
        specs = [replace(s, sliding_offset=slide[k]) if k in slide else s for k, s in enumerate(specs)]
        study = make_study(specs)
    except SpecError as exc:
        raise CaseFileError(str(exc)) from exc
    save_study(study.cases, study.shared, out)
    (out / "ledger.csv").write_text(ledger_csv(list(study.ledger)))
    dump_json(spec_to_dict(arch_spec), out / "arch_spec.json")
    print(f"{len(study.cases)}-case study written to {out}")
    return EXIT_OK


def _flat(T) -> dict:
    return {f"m{i}{j}": float(T.matrix[i, j]) for i in range(3) for j in range(4)}


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occlusplint", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="therapeutic transform from scan pairs or tracker records")
    e.add_argument("--mode", choices=("scans", "tracker"), default="scans")
    e.add_argument("--mi", nargs=2, metavar=("U0", "L0"), help="upper and lower scans in MI")
    e.add_argument("--tp", nargs=2, metavar=("U1", "L1"), help="upper and lower scans in TP")
    e.add_argument("--bow", nargs=2, metavar=("B0", "B1"), help="bow point clouds in MI and TP")
    e.add_argument("--tf", help="face-scanner calibration transform (JSON)")
    e.add_argument("--td", help="dental-model calibration transform (JSON)")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="ICP parameter override")
    e.add_argument("-o", "--out", help="transform file to write (JSON)")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("build", help="design a splint from a case file")
    b.add_argument("case", help="case file (JSON)")
    b.add_argument("-o", "--out", required=True, help="output directory")
    b.add_argument("--set", action="append", metavar="KEY=VALUE", help="splint parameter override")
    b.add_argument("--override-feasibility", action="store_true", help="build even if a constraint fails")
    b.set_defaults(func=cmd_build)

    a = sub.add_parser("analyze", help="six-stage accuracy analysis of a study directory")
    a.add_argument("study", help="study directory (study.json) or a directory of per-stage CSV tables")
    a.add_argument("-o", "--out", required=True, help="output directory")
    a.add_argument("--chain", choices=("splint", "maxilla"), default="splint")
    a.add_argument("--pooling", choices=("total", "within"), default="total")
    a.add_argument("--maps", action="store_true", help="write per-case distance maps (PLY)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="synthetic scenario or study")
    s.add_argument("spec", nargs="?", help="scenario spec file (JSON); defaults apply when omitted")
    s.add_argument("-o", "--out", required=True, help="output directory")
    s.add_argument("--cases", type=int, help="write an N-case study instead of a single scenario")
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_INPUT
    except RegistrationError as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_REGISTRATION
    except (CaseFileError, UsageError, MeshError, NotRigidError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
