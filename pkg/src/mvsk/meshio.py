"""OBJ and PLY reading/writing for triangle meshes and oriented point clouds."""

from __future__ import annotations

import os
import warnings
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedFeature
from .geometry import TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_mesh(path) -> TriMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _load_obj(path)
    elif suffix == ".ply":
        mesh = _load_ply(path)
    else:
        raise ParseError(f"unknown mesh extension {suffix!r}", path)
    return mesh.cleaned()


def save_mesh(mesh: TriMesh, path, binary: bool = True) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        _save_obj(mesh, path)
    elif suffix == ".ply":
        _save_ply(path, mesh.vertices, mesh.triangles, normals=mesh.normals, binary=binary)
    else:
        raise ValueError(f"unknown mesh extension {suffix!r}")


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def _load_obj(path: Path) -> TriMesh:
    verts, faces = [], []
    fanned = 0
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            tag = tokens[0]
            if tag == "v":
                try:
                    verts.append([float(x) for x in tokens[1:4]])
                except ValueError:
                    raise ParseError("bad vertex record", path, lineno) from None
                if len(verts[-1]) != 3:
                    raise ParseError("vertex needs 3 coordinates", path, lineno)
            elif tag == "f":
                idx = []
                for tok in tokens[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ParseError(f"bad face index {tok!r}", path, lineno) from None
                    # negative indices are relative to the current vertex count
                    i = i - 1 if i > 0 else len(verts) + i
                    if i < 0 or i >= len(verts):
                        raise ParseError(f"face index {head} out of range ({len(verts)} vertices)", path, lineno)
                    idx.append(i)
                if len(idx) < 3:
                    raise ParseError("face needs at least 3 vertices", path, lineno)
                if len(idx) > 3:
                    fanned += 1
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    if fanned:
        warnings.warn(f"{path}: {fanned} non-triangle faces fan-triangulated", UnsupportedFeature, stacklevel=3)
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def _save_obj(mesh: TriMesh, path: Path) -> None:
    with open(path, "w") as f:
        f.write(f"# {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles\n")
        for v in mesh.vertices.tolist():
            f.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for t in mesh.triangles + 1:
            f.write(f"f {t[0]} {t[1]} {t[2]}\n")


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def _read_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic", path, offset=0)
    fmt = None
    elements = []
    while True:
        offset = fh.tell()
        raw = fh.readline()
        if not raw:
            raise ParseError("unterminated header", path, offset=offset)
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before element", path, offset=offset)
            if tokens[1] == "list":
                elements[-1][2].append((tokens[4], "list", tokens[2], tokens[3]))
            else:
                elements[-1][2].append((tokens[2], tokens[1]))
        elif tokens[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header line {raw!r}", path, offset=offset)
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}", path)
    return fmt, elements


def _load_ply(path: Path) -> TriMesh:
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh, path)
        data_start = fh.tell()
        body = fh.read()
    data = {}
    if fmt == "ascii":
        lines = body.decode("ascii").split("\n")
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                while pos < len(lines) and not lines[pos].strip():
                    pos += 1
                if pos >= len(lines):
                    raise ParseError(f"truncated {name} data", path)
                rows.append(lines[pos].split())
                pos += 1
            data[name] = _parse_ascii_rows(rows, props, path)
    else:
        pos = 0
        for name, count, props in elements:
            data[name], pos = _parse_binary(body, pos, count, props, path, data_start)

    if "vertex" not in data:
        raise ParseError("no vertex element", path)
    vert = data["vertex"]
    V = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    N = None
    if all(k in vert for k in ("nx", "ny", "nz")):
        N = np.stack([vert["nx"], vert["ny"], vert["nz"]], axis=1).astype(np.float64)
    faces = []
    fanned = 0
    face_lists = data.get("face", {}).get("vertex_indices")
    if face_lists is None and "face" in data:
        face_lists = data["face"].get("vertex_index")
    for poly in face_lists or []:
        poly = [int(i) for i in poly]
        if len(poly) < 3:
            raise ParseError("face needs at least 3 vertices", path)
        if min(poly) < 0 or max(poly) >= len(V):
            raise ParseError(f"face index out of range ({len(V)} vertices)", path)
        if len(poly) > 3:
            fanned += 1
        for k in range(1, len(poly) - 1):
            faces.append((poly[0], poly[k], poly[k + 1]))
    if fanned:
        warnings.warn(f"{path}: {fanned} non-triangle faces fan-triangulated", UnsupportedFeature, stacklevel=3)
    return TriMesh(V, np.array(faces, dtype=np.int64).reshape(-1, 3), N)


def _parse_ascii_rows(rows, props, path):
    out = {p[0]: [] for p in props}
    for row in rows:
        k = 0
        for p in props:
            try:
                if p[1] == "list":
                    n = int(row[k])
                    out[p[0]].append(row[k + 1:k + 1 + n])
                    k += 1 + n
                else:
                    out[p[0]].append(float(row[k]))
                    k += 1
            except (IndexError, ValueError):
                raise ParseError(f"bad ascii row {' '.join(row)!r}", path) from None
    return {k: (v if any(p[0] == k and p[1] == "list" for p in props) else np.array(v)) for k, v in out.items()}


def _parse_binary(body, pos, count, props, path, data_start):
    if not any(p[1] == "list" for p in props):
        dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
        end = pos + dt.itemsize * count
        if end > len(body):
            raise ParseError("truncated binary element", path, offset=data_start + pos)
        arr = np.frombuffer(body, dtype=dt, count=count, offset=pos)
        return {name: arr[name] for name in dt.names}, end
    if len(props) == 1 and count:
        # common case: one list property where every face is a triangle
        name, _, ct, it = props[0]
        dt = np.dtype([("n", "<" + _PLY_TYPES[ct]), ("i", "<" + _PLY_TYPES[it], (3,))])
        end = pos + dt.itemsize * count
        if end <= len(body):
            arr = np.frombuffer(body, dtype=dt, count=count, offset=pos)
            if np.all(arr["n"] == 3):
                return {name: list(arr["i"])}, end
    out = {p[0]: [] for p in props}
    for _ in range(count):
        for p in props:
            if p[1] == "list":
                cdt = np.dtype("<" + _PLY_TYPES[p[2]])
                idt = np.dtype("<" + _PLY_TYPES[p[3]])
                if pos + cdt.itemsize > len(body):
                    raise ParseError("truncated list", path, offset=data_start + pos)
                n = int(np.frombuffer(body, cdt, 1, pos)[0])
                pos += cdt.itemsize
                if pos + n * idt.itemsize > len(body):
                    raise ParseError("truncated list", path, offset=data_start + pos)
                out[p[0]].append(np.frombuffer(body, idt, n, pos))
                pos += n * idt.itemsize
            else:
                sdt = np.dtype("<" + _PLY_TYPES[p[1]])
                if pos + sdt.itemsize > len(body):
                    raise ParseError("truncated scalar", path, offset=data_start + pos)
                out[p[0]].append(np.frombuffer(body, sdt, 1, pos)[0])
                pos += sdt.itemsize
    return {k: (v if any(p[0] == k and p[1] == "list" for p in props) else np.array(v)) for k, v in out.items()}, pos


def _save_ply(path, vertices, triangles=None, normals=None, extra=None, binary=True):
    """Write vertices (double precision), optional normals/extra int columns and triangles."""
    V = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    cols = [V[:, 0], V[:, 1], V[:, 2]]
    if normals is not None:
        N = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
        cols += [N[:, 0], N[:, 1], N[:, 2]]
    for name, values in (extra or {}).items():
        fields.append((name, "<i4"))
        cols.append(np.asarray(values, dtype=np.int32))
    F = None if triangles is None else np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    ply_names = {"<f8": "double", "<i4": "int"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(V)}"]
    header += [f"property {ply_names[t]} {n}" for n, t in fields]
    if F is not None:
        header += [f"element face {len(F)}", "property list uchar int vertex_indices"]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(len(V), dtype=np.dtype(fields))
            for (name, _), c in zip(fields, cols):
                rec[name] = c
            f.write(rec.tobytes())
            if F is not None:
                frec = np.empty(len(F), dtype=np.dtype([("n", "u1"), ("i", "<i4", (3,))]))
                frec["n"] = 3
                frec["i"] = F
                f.write(frec.tobytes())
        else:
            for row in zip(*cols):
                f.write((" ".join(repr(float(x)) if isinstance(x, np.floating) else str(x) for x in row) + "\n").encode())
            if F is not None:
                for t in F:
                    f.write(f"3 {t[0]} {t[1]} {t[2]}\n".encode())


def save_point_cloud(path, points, normals, view_index=None, binary=True) -> None:
    """Oriented point cloud as PLY (x y z nx ny nz [view])."""
    extra = None if view_index is None else {"view": view_index}
    _save_ply(os.fspath(path), points, None, normals, extra, binary)


def load_point_cloud(path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh, path)
        data_start = fh.tell()
        body = fh.read()
    if fmt == "ascii":
        lines = [ln.split() for ln in body.decode("ascii").split("\n") if ln.strip()]
        name, count, props = elements[0]
        vert = _parse_ascii_rows(lines[:count], props, path)
    else:
        vert, _ = _parse_binary(body, 0, elements[0][1], elements[0][2], path, data_start)
    P = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    N = None
    if "nx" in vert:
        N = np.stack([vert["nx"], vert["ny"], vert["nz"]], axis=1).astype(np.float64)
    return P, N
