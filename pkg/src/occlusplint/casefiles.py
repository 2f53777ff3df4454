"""On-disk formats: transform files, splint case files and study directories.

All formats are JSON with paths relative to the file that names them. Writers
sort keys and use fixed float formatting so identical inputs give identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .mesh import Plane, RigidTransform, TriangleMesh, load_mesh, save_mesh


class CaseFileError(ValueError):
    """Malformed or inconsistent case/study/spec file."""


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseFileError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise CaseFileError(f"{path}: top level must be an object")
    return data


# -- transforms ------------------------------------------------------------------

def transform_to_json(T: RigidTransform) -> dict:
    return {"matrix": [[float(x) for x in row] for row in T.matrix]}


def transform_from_json(obj, where: str = "transform") -> RigidTransform:
    """``{"matrix": 4x4}`` or ``{"translation": .., "axis": .., "angle_deg": .., "center": ..}``."""
    if not isinstance(obj, dict):
        raise CaseFileError(f"{where}: expected an object")
    try:
        if "matrix" in obj:
            try:
                return RigidTransform(np.asarray(obj["matrix"], dtype=np.float64))
            except ValueError:
                # rounded matrices are re-orthonormalized
                return RigidTransform.from_flat(obj["matrix"])
        t = obj.get("translation", (0.0, 0.0, 0.0))
        if "axis" in obj or "angle_deg" in obj:
            return RigidTransform.from_axis_angle(obj.get("axis", (0, 0, 1)), float(obj.get("angle_deg", 0.0)),
                                                  t, center=obj.get("center"))
        return RigidTransform.from_translation(t)
    except (TypeError, ValueError) as exc:
        raise CaseFileError(f"{where}: {exc}") from exc


def read_transform(path) -> RigidTransform:
    data = read_json(path)
    return transform_from_json(data.get("T_th", data) if "matrix" not in data else data, str(path))


def plane_from_json(obj, where="cutting_plane") -> Plane:
    try:
        return Plane(tuple(obj["normal"]), float(obj["offset"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseFileError(f"{where}: {exc}") from exc


def plane_to_json(p: Plane) -> dict:
    return {"normal": list(p.normal), "offset": p.offset}


def _mask_path(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    return np.load(path, allow_pickle=False).astype(bool)


def save_mask(mask, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.save(fh, np.asarray(mask, dtype=bool), allow_pickle=False)
    return path


# -- splint case files -----------------------------------------------------------

def coerce_params(base, overrides: dict, where="params"):
    """Apply ``overrides`` to a frozen parameter dataclass, type-checked against its defaults."""
    from dataclasses import replace
    known = {f.name: f for f in fields(base)}
    kw = {}
    for key, value in overrides.items():
        if key not in known:
            raise CaseFileError(f"{where}: unknown parameter {key!r}")
        current = getattr(base, key)
        if key == "cutting_plane":
            kw[key] = None if value is None else plane_from_json(value, f"{where}.cutting_plane")
            continue
        kind = type(current) if current is not None else float
        try:
            if kind is bool:
                if isinstance(value, str):
                    value = {"true": True, "false": False, "1": True, "0": False}[value.lower()]
                kw[key] = bool(value)
            elif kind is int:
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(f"expected an integer, got {value}")
                kw[key] = int(value)
            elif kind is float:
                if isinstance(value, bool):
                    raise ValueError("expected a number")
                kw[key] = float(value)
            else:
                kw[key] = kind(value)
        except (KeyError, TypeError, ValueError) as exc:
            raise CaseFileError(f"{where}.{key}: {exc}") from exc
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise CaseFileError(f"{where}: {exc}") from exc


def load_case(path):
    """Read a splint case file; returns ``(DesignCase, SplintParams)``.

    Keys: ``maxilla``, ``mandible`` (mesh paths), ``T_th`` (transform object
    or path to a transform file), optional ``occlusal``, ``crown_mask``
    (``.npy``), ``cutting_plane`` and ``params`` (SplintParams overrides).
    """
    from .splint import DesignCase, SplintParams
    path = Path(path)
    data = read_json(path)
    root = path.parent
    for key in ("maxilla", "mandible", "T_th"):
        if key not in data:
            raise CaseFileError(f"{path}: missing key {key!r}")
    t = data["T_th"]
    T_th = read_transform(root / t) if isinstance(t, str) else transform_from_json(t, f"{path}: T_th")
    plane = plane_from_json(data["cutting_plane"], f"{path}: cutting_plane") if data.get("cutting_plane") else None
    params = coerce_params(SplintParams(), data.get("params", {}), f"{path}: params")
    if plane is not None and params.cutting_plane is None:
        params = coerce_params(params, {"cutting_plane": plane_to_json(plane)})
    maxilla = load_mesh(root / data["maxilla"])
    mask = _mask_path(root / data["crown_mask"]) if data.get("crown_mask") else None
    try:
        case = DesignCase(maxilla, load_mesh(root / data["mandible"]), T_th,
                          occlusal=load_mesh(root / data["occlusal"]) if data.get("occlusal") else None,
                          crown_mask=mask, cutting_plane=plane)
    except ValueError as exc:
        raise CaseFileError(f"{path}: {exc}") from exc
    return case, params


# -- study directories -----------------------------------------------------------

MANIFEST = "study.json"
_MESH_FIELDS = ("splint_model", "maxilla_model", "mandible_model", "splint_scan", "maxilla_scan",
                "mandible_scan", "seated_scan", "bite_scan")
_MASK_FIELDS = ("seated_splint_mask", "seated_palate_mask", "bite_splint_mask", "bite_mandible_mask")


def _store(value, name, folder: Path, root: Path):
    if isinstance(value, TriangleMesh):
        p = folder / f"{name}.ply"
        save_mesh(value, p)
    else:
        p = save_mask(value, folder / f"{name}.npy")
    return p.relative_to(root).as_posix()


def save_study(cases, shared: dict | None, outdir) -> Path:
    """Write a study directory: ``study.json`` plus one PLY/NPY file per input."""
    root = Path(outdir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"shared": {}, "cases": []}
    if shared:
        (root / "shared").mkdir(exist_ok=True)
        for name in sorted(shared):
            manifest["shared"][name] = _store(shared[name], name, root / "shared", root)
    for case in cases:
        folder = root / f"case_{case.label}"
        folder.mkdir(exist_ok=True)
        entry = {"label": case.label, "T_th": transform_to_json(case.T_th)}
        for name in _MESH_FIELDS + _MASK_FIELDS:
            value = getattr(case, name)
            if value is not None:
                entry[name] = _store(value, name, folder, root)
        manifest["cases"].append(entry)
    return dump_json(manifest, root / MANIFEST)


def _load_field(name, rel, root: Path):
    p = root / rel
    if name in _MASK_FIELDS:
        return _mask_path(p)
    return load_mesh(p, clean=False)


def load_study(path):
    """Read a study directory; returns ``(cases, shared)``."""
    from .accuracy import StudyCase
    root = Path(path)
    data = read_json(root / MANIFEST)
    shared = {}
    allowed = set(_MESH_FIELDS + _MASK_FIELDS)
    for name, rel in sorted(data.get("shared", {}).items()):
        if name not in allowed:
            raise CaseFileError(f"{root / MANIFEST}: unknown shared field {name!r}")
        shared[name] = _load_field(name, rel, root)
    cases = []
    for i, entry in enumerate(data.get("cases", [])):
        where = f"{root / MANIFEST}: cases[{i}]"
        if "label" not in entry or "T_th" not in entry:
            raise CaseFileError(f"{where}: needs 'label' and 'T_th'")
        kw = {}
        for name, rel in entry.items():
            if name in ("label", "T_th"):
                continue
            if name not in allowed:
                raise CaseFileError(f"{where}: unknown field {name!r}")
            kw[name] = _load_field(name, rel, root)
        for mask, scan in (("seated_splint_mask", "seated_scan"), ("seated_palate_mask", "seated_scan"),
                           ("bite_splint_mask", "bite_scan"), ("bite_mandible_mask", "bite_scan")):
            if mask in kw and scan in kw and len(kw[mask]) != len(kw[scan].triangles):
                raise CaseFileError(f"{where}: {mask} has {len(kw[mask])} entries for "
                                    f"{len(kw[scan].triangles)} triangles of {scan}")
        cases.append(StudyCase(str(entry["label"]), transform_from_json(entry["T_th"], f"{where}.T_th"), **kw))
    return cases, shared
