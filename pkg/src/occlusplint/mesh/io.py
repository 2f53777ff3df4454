"""STL / PLY / OBJ readers and writers (positions and faces only)."""

from __future__ import annotations

import logging
import os
import struct
from pathlib import Path

import numpy as np

from .core import MeshError, TriangleMesh

log = logging.getLogger(__name__)

FORMATS = ("stl", "ply", "obj")


class MalformedFileError(MeshError):
    def __init__(self, path, reason):
        super().__init__(f"malformed file {path}: {reason}")


def _detect(path: Path, fmt: str | None) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise MeshError(f"unsupported mesh format {fmt!r} for {path}")
    return fmt


def load_mesh(path, format: str | None = None, *, clean: bool = True) -> TriangleMesh:
    """Read a mesh, weld duplicate vertices and drop degenerate triangles.

    ``clean=False`` keeps the stored vertices and triangles verbatim, which
    per-triangle masks written alongside the mesh rely on.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    fmt = _detect(path, format)
    data = path.read_bytes()
    reader = {"stl": _read_stl, "ply": _read_ply, "obj": _read_obj}[fmt]
    try:
        v, f = reader(data, path)
    except MalformedFileError:
        raise
    except (ValueError, IndexError, struct.error, UnicodeDecodeError) as exc:
        raise MalformedFileError(path, exc) from exc
    if len(f) == 0:
        raise MeshError(f"empty mesh: {path}")
    mesh = TriangleMesh(v, f, clean=clean)
    if mesh.dropped_degenerate:
        log.warning("%s: dropped %d degenerate triangles", path, mesh.dropped_degenerate)
    if mesh.is_empty:
        raise MeshError(f"empty mesh after cleanup: {path}")
    return mesh


def save_mesh(mesh: TriangleMesh, path, format: str | None = None, *, binary: bool = True,
              vertex_scalars: dict | None = None) -> None:
    path = Path(path)
    if mesh.is_empty:
        raise MeshError("refusing to write an empty mesh")
    fmt = _detect(path, format)
    if vertex_scalars and fmt != "ply":
        raise MeshError("per-vertex scalars are only supported for PLY")
    if fmt == "stl":
        payload = _stl_binary(mesh) if binary else _stl_ascii(mesh)
    elif fmt == "ply":
        payload = _ply(mesh, binary, vertex_scalars or {})
    else:
        payload = _obj(mesh)
    if path.parent and not path.parent.exists():
        raise OSError(f"directory does not exist: {path.parent}")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# -- STL ------------------------------------------------------------------------

def _read_stl(data: bytes, path):
    if len(data) >= 84:
        n = struct.unpack_from("<I", data, 80)[0]
        if 84 + 50 * n == len(data):
            return _read_stl_binary(data, n)
    head = data[:512].lstrip().lower()
    if head.startswith(b"solid") and b"facet" in data[:4096].lower():
        return _read_stl_ascii(data.decode("ascii", errors="strict"), path)
    if len(data) < 84:
        raise MalformedFileError(path, "truncated binary STL header")
    raise MalformedFileError(path, "binary STL size does not match facet count")


def _read_stl_binary(data: bytes, n: int):
    rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.frombuffer(data, dtype=rec, count=n, offset=84)
    v = arr["v"].reshape(-1, 3).astype(np.float64)
    return v, np.arange(len(v)).reshape(-1, 3)


def _read_stl_ascii(text: str, path):
    verts = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if tok and tok[0] == "vertex":
            if len(tok) != 4:
                raise MalformedFileError(path, f"line {lineno}: bad vertex record")
            verts.append([float(x) for x in tok[1:]])
    if len(verts) % 3:
        raise MalformedFileError(path, "vertex count is not a multiple of 3")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    return v, np.arange(len(v)).reshape(-1, 3)


def _stl_binary(mesh: TriangleMesh) -> bytes:
    rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.zeros(len(mesh.triangles), dtype=rec)
    arr["normal"] = mesh.face_normals
    arr["v"] = mesh.corners
    header = b"occlusplint binary STL".ljust(80, b" ")
    return header + struct.pack("<I", len(arr)) + arr.tobytes()


def _stl_ascii(mesh: TriangleMesh) -> bytes:
    lines = ["solid occlusplint"]
    for n, tri in zip(mesh.face_normals, mesh.corners):
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        for p in tri:
            lines.append(f"      vertex {p[0]:.9e} {p[1]:.9e} {p[2]:.9e}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append("endsolid occlusplint")
    return ("\n".join(lines) + "\n").encode("ascii")


# -- PLY ------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(data: bytes, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedFileError(path, "missing PLY header")
    header = data[:end].decode("ascii").splitlines()
    body_start = data.index(b"\n", end) + 1
    fmt = None
    elements = []  # (name, count, [(prop, type) or (prop, (count_type, item_type))])
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MalformedFileError(path, "property before element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], (tok[2], tok[3])))
            else:
                elements[-1][2].append((tok[2], tok[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MalformedFileError(path, f"unsupported PLY format {fmt}")
    body = data[body_start:]
    verts = faces = None
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, ptype in props:
                    if isinstance(ptype, tuple):
                        k = int(tokens[pos])
                        row[pname] = [int(x) for x in tokens[pos + 1:pos + 1 + k]]
                        pos += 1 + k
                    else:
                        row[pname] = float(tokens[pos])
                        pos += 1
                rows.append(row)
            if name == "vertex":
                verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
            elif name == "face":
                key = next(p for p, t in props if isinstance(t, tuple))
                faces = _triangulate([r[key] for r in rows])
    else:
        pos = 0
        for name, count, props in elements:
            if all(not isinstance(t, tuple) for _, t in props):
                dt = np.dtype([(p, "<" + _PLY_TYPES[t]) for p, t in props])
                arr = np.frombuffer(body, dtype=dt, count=count, offset=pos)
                pos += dt.itemsize * count
                if name == "vertex":
                    verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            else:
                polys = []
                for _ in range(count):
                    row = None
                    for pname, ptype in props:
                        if isinstance(ptype, tuple):
                            ct = np.dtype("<" + _PLY_TYPES[ptype[0]])
                            it = np.dtype("<" + _PLY_TYPES[ptype[1]])
                            k = int(np.frombuffer(body, ct, 1, pos)[0])
                            pos += ct.itemsize
                            vals = np.frombuffer(body, it, k, pos)
                            pos += it.itemsize * k
                            if row is None:
                                row = [int(x) for x in vals]
                        else:
                            pos += np.dtype(_PLY_TYPES[ptype]).itemsize
                    polys.append(row)
                if name == "face":
                    faces = _triangulate(polys)
    if verts is None or faces is None:
        raise MalformedFileError(path, "PLY lacks vertex or face element")
    return verts, faces


def _triangulate(polys):
    out = []
    for p in polys:
        if len(p) < 3:
            raise ValueError("face with fewer than 3 vertices")
        for k in range(1, len(p) - 1):
            out.append((p[0], p[k], p[k + 1]))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def _ply(mesh: TriangleMesh, binary: bool, scalars: dict) -> bytes:
    names = list(scalars)
    for k in names:
        if len(scalars[k]) != len(mesh.vertices):
            raise MeshError(f"scalar {k!r} length does not match vertex count")
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {len(mesh.vertices)}",
            "property double x", "property double y", "property double z"]
    head += [f"property double {k}" for k in names]
    head += [f"element face {len(mesh.triangles)}", "property list uchar int vertex_indices", "end_header"]
    header = ("\n".join(head) + "\n").encode("ascii")
    cols = [mesh.vertices] + [np.asarray(scalars[k], dtype=np.float64)[:, None] for k in names]
    vdata = np.hstack(cols)
    if binary:
        fdt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
        farr = np.zeros(len(mesh.triangles), dtype=fdt)
        farr["n"] = 3
        farr["idx"] = mesh.triangles
        return header + vdata.astype("<f8").tobytes() + farr.tobytes()
    vlines = "\n".join(" ".join(repr(float(x)) for x in row) for row in vdata)
    flines = "\n".join(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    return header + (vlines + "\n" + flines + "\n").encode("ascii")


# -- OBJ ------------------------------------------------------------------------

def _read_obj(data: bytes, path):
    verts, polys = [], []
    for lineno, line in enumerate(data.decode("ascii").splitlines(), 1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise MalformedFileError(path, f"line {lineno}: bad vertex record")
            verts.append([float(x) for x in tok[1:4]])
        elif tok[0] == "f":
            idx = []
            for t in tok[1:]:
                i = int(t.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            polys.append(idx)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), _triangulate(polys)


def _obj(mesh: TriangleMesh) -> bytes:
    vlines = "\n".join(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    flines = "\n".join(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist())
    return (vlines + "\n" + flines + "\n").encode("ascii")
