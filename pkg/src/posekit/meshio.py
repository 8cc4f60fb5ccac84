"""Minimal PLY / OBJ mesh reading and ASCII PLY writing.

Supported input:
  * PLY, ascii or binary_little_endian, with vertex ``x y z`` (any numeric
    type; extra properties are skipped) and an optional face list property
    ``vertex_indices`` / ``vertex_index``.  Polygons are fan-triangulated.
  * OBJ ``v`` and ``f`` lines; face tokens may be ``i``, ``i/j``, ``i//k`` or
    ``i/j/k`` with 1-based or negative (relative) indices.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from posekit.errors import IoFailure, MalformedMesh, UnsupportedFormat

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _validate(vertices: np.ndarray, triangles: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    if len(vertices) == 0:
        raise MalformedMesh(f"{name}: no vertices")
    bad = np.flatnonzero(~np.isfinite(vertices).all(axis=1))
    if len(bad):
        raise MalformedMesh(f"{name}: vertex {bad[0]} has a non-finite coordinate")
    if len(triangles):
        out = np.flatnonzero(((triangles < 0) | (triangles >= len(vertices))).any(axis=1))
        if len(out):
            raise MalformedMesh(
                f"{name}: face {out[0]} references a vertex outside 0..{len(vertices) - 1}"
            )
    return vertices, triangles


def load_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a mesh; returns ``(vertices (n, 3) float64, triangles (m, 3) int64)``."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix not in (".ply", ".obj"):
        raise UnsupportedFormat(f"{p.name}: only .ply and .obj are supported")
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {p}: {exc}") from exc
    v, f = _read_ply(blob, p.name) if suffix == ".ply" else _read_obj(blob, p.name)
    return _validate(v, f, p.name)


def _read_obj(blob: bytes, name: str) -> tuple[np.ndarray, np.ndarray]:
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(blob.decode("utf-8", errors="replace").splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            try:
                verts.append(tuple(float(x) for x in parts[1:4]))
            except ValueError:
                raise MalformedMesh(f"{name}: line {lineno}: bad vertex {raw.strip()!r}") from None
            if len(verts[-1]) != 3:
                raise MalformedMesh(f"{name}: line {lineno}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            poly = []
            for tok in parts[1:]:
                try:
                    idx = int(tok.split("/")[0])
                except ValueError:
                    raise MalformedMesh(f"{name}: line {lineno}: bad face token {tok!r}") from None
                if idx == 0:
                    raise MalformedMesh(f"{name}: line {lineno}: face index 0 is invalid")
                # negative indices count back from the vertices read so far
                poly.append(idx - 1 if idx > 0 else len(verts) + idx)
            if len(poly) < 3:
                raise MalformedMesh(f"{name}: line {lineno}: face needs at least 3 vertices")
            if any(i < 0 or i >= len(verts) for i in poly):
                raise MalformedMesh(f"{name}: line {lineno}: face index out of range")
            tris.extend(_fan(poly))
    return (
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(tris, dtype=np.int64).reshape(-1, 3),
    )


def _parse_ply_header(blob: bytes, name: str):
    end = blob.find(b"end_header")
    if not blob.startswith(b"ply") or end < 0:
        raise MalformedMesh(f"{name}: missing ply magic or end_header")
    nl = blob.find(b"\n", end)
    body_start = len(blob) if nl < 0 else nl + 1
    fmt = None
    elements: list[dict] = []
    for lineno, line in enumerate(blob[:end].decode("ascii", errors="replace").splitlines(), 1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise MalformedMesh(f"{name}: header line {lineno}: bad element {line!r}")
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MalformedMesh(f"{name}: header line {lineno}: property before element")
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise MalformedMesh(f"{name}: header line {lineno}: bad list property")
                elements[-1]["props"].append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise MalformedMesh(f"{name}: header line {lineno}: bad property {line!r}")
                elements[-1]["props"].append((parts[2], _PLY_TYPES[parts[1]], None))
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"{name}: PLY format {fmt!r} is not supported")
    return fmt, elements, body_start


def _read_ply(blob: bytes, name: str) -> tuple[np.ndarray, np.ndarray]:
    fmt, elements, start = _parse_ply_header(blob, name)
    verts = np.zeros((0, 3))
    tris: list[tuple[int, int, int]] = []
    if fmt == "ascii":
        tokens = blob[start:].decode("ascii", errors="replace").split()
        pos = 0

        def take(el_name, i):
            nonlocal pos
            if pos >= len(tokens):
                raise MalformedMesh(f"{name}: {el_name} {i}: unexpected end of data")
            pos += 1
            return tokens[pos - 1]
    else:
        offset = start

    for el in elements:
        names = [p[0] for p in el["props"]]
        is_vertex = el["name"] == "vertex"
        is_face = el["name"] == "face"
        if is_vertex and not {"x", "y", "z"} <= set(names):
            raise MalformedMesh(f"{name}: vertex element lacks x/y/z")
        scalar_only = all(p[2] is None for p in el["props"])
        if fmt == "binary_little_endian" and scalar_only:
            dt = np.dtype([(p[0], "<" + p[1]) for p in el["props"]])
            need = dt.itemsize * el["count"]
            if offset + need > len(blob):
                raise MalformedMesh(f"{name}: {el['name']} data truncated")
            arr = np.frombuffer(blob, dtype=dt, count=el["count"], offset=offset)
            offset += need
            if is_vertex:
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            continue
        rows = []
        for i in range(el["count"]):
            row = {}
            for pname, t, it in el["props"]:
                if fmt == "ascii":
                    try:
                        if it is None:
                            row[pname] = float(take(el["name"], i))
                        else:
                            n = int(take(el["name"], i))
                            row[pname] = [int(take(el["name"], i)) for _ in range(n)]
                    except ValueError:
                        raise MalformedMesh(f"{name}: {el['name']} {i}: non-numeric value") from None
                else:
                    dt = np.dtype("<" + t)
                    if offset + dt.itemsize > len(blob):
                        raise MalformedMesh(f"{name}: {el['name']} {i}: data truncated")
                    val = np.frombuffer(blob, dtype=dt, count=1, offset=offset)[0]
                    offset += dt.itemsize
                    if it is None:
                        row[pname] = float(val)
                    else:
                        idt = np.dtype("<" + it)
                        n = int(val)
                        if offset + idt.itemsize * n > len(blob):
                            raise MalformedMesh(f"{name}: {el['name']} {i}: data truncated")
                        row[pname] = np.frombuffer(blob, dtype=idt, count=n, offset=offset).tolist()
                        offset += idt.itemsize * n
            rows.append(row)
        if is_vertex:
            verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64).reshape(-1, 3)
        elif is_face:
            key = next((k for k in ("vertex_indices", "vertex_index") if k in names), None)
            if key is None:
                raise MalformedMesh(f"{name}: face element lacks vertex_indices")
            for i, r in enumerate(rows):
                if len(r[key]) < 3:
                    raise MalformedMesh(f"{name}: face {i} has fewer than 3 vertices")
                tris.extend(_fan(list(r[key])))
    return verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def write_ply(path, vertices, triangles=None) -> Path:
    """Write an ASCII PLY; ``triangles`` may be omitted for a point cloud."""
    p = Path(path)
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.zeros((0, 3), dtype=np.int64) if triangles is None else np.asarray(triangles).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(v)}",
             "property double x", "property double y", "property double z"]
    if len(f):
        lines += [f"element face {len(f)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in v.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in f.tolist()]
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {p}: {exc}") from exc
    return p
