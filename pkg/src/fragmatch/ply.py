"""Minimal PLY reader/writer for vertex clouds (ASCII and binary little-endian)."""
from __future__ import annotations

import os

import numpy as np

from .pointcloud import PointCloud

__all__ = ["PlyError", "load_ply", "save_ply"]

_SCALAR = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def _parse_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError("line 1: missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, dtype) | (prop, ('list', cnt, item))]]
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise PlyError(f"line {lineno}: header ended without 'end_header'")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise PlyError(f"line {lineno}: unsupported format {' '.join(tok[1:])!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError(f"line {lineno}: malformed element declaration")
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"line {lineno}: property before any element")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _SCALAR or tok[3] not in _SCALAR:
                    raise PlyError(f"line {lineno}: malformed list property")
                elements[-1][2].append((tok[4], ("list", _SCALAR[tok[2]], _SCALAR[tok[3]])))
            else:
                if len(tok) != 3 or tok[1] not in _SCALAR:
                    raise PlyError(f"line {lineno}: malformed property {' '.join(tok[1:])!r}")
                elements[-1][2].append((tok[2], _SCALAR[tok[1]]))
        else:
            raise PlyError(f"line {lineno}: unexpected header keyword {tok[0]!r}")
    if fmt is None:
        raise PlyError("header has no format line")
    return fmt, elements, lineno


def load_ply(path) -> PointCloud:
    """Read the ``vertex`` element of a PLY file.

    Normals are populated only when ``nx, ny, nz`` are all declared.
    """
    with open(path, "rb") as fh:
        fmt, elements, header_lines = _parse_header(fh)
        names = [e[0] for e in elements]
        if "vertex" not in names:
            raise PlyError("no 'vertex' element in header")
        props = dict(elements[names.index("vertex")][2])
        for axis in "xyz":
            if axis not in props:
                raise PlyError(f"element 'vertex' lacks property {axis!r}")
        has_normals = all(n in props for n in ("nx", "ny", "nz"))

        if fmt == "ascii":
            data = _read_ascii(fh, elements, header_lines)
        else:
            data = _read_binary(fh, elements, "<" if fmt.endswith("little_endian") else ">")

    vert = data
    pts = np.column_stack([vert[a].astype(np.float64) for a in "xyz"])
    normals = None
    if has_normals:
        normals = np.column_stack([vert[a].astype(np.float64) for a in ("nx", "ny", "nz")])
    bad = ~np.all(np.isfinite(pts), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        where = f"line {header_lines + 1 + i}" if fmt == "ascii" else f"vertex {i}"
        raise PlyError(f"{where}: non-finite vertex coordinate")
    if len(pts) == 0:
        raise PlyError("element 'vertex' is empty")
    return PointCloud(pts, normals, source_id=os.path.basename(str(path)))


def _read_ascii(fh, elements, header_lines):
    lineno = header_lines
    for name, count, props in elements:
        if name != "vertex":
            # skip other elements line by line; vertex data is all we keep
            for _ in range(count):
                if not fh.readline():
                    raise PlyError(f"line {lineno + 1}: element {name!r} truncated")
                lineno += 1
            continue
        if any(isinstance(dt, tuple) for _, dt in props):
            raise PlyError("list properties on 'vertex' are not supported")
        rows = []
        for i in range(count):
            raw = fh.readline()
            lineno += 1
            if not raw.strip():
                raise PlyError(
                    f"line {lineno}: element 'vertex' declares {count} entries, found {i}"
                )
            tok = raw.split()
            if len(tok) != len(props):
                raise PlyError(f"line {lineno}: expected {len(props)} values, got {len(tok)}")
            try:
                rows.append([float(t) for t in tok])
            except ValueError as exc:
                raise PlyError(f"line {lineno}: {exc}") from None
        arr = np.array(rows, dtype=np.float64).reshape(count, len(props))
        return {p: arr[:, j] for j, (p, _) in enumerate(props)}
    raise PlyError("no vertex data")


def _read_binary(fh, elements, endian):
    for name, count, props in elements:
        if any(isinstance(dt, tuple) for _, dt in props):
            if name == "vertex":
                raise PlyError("list properties on 'vertex' are not supported")
            raise PlyError(f"element {name!r} with list properties precedes 'vertex'")
        dtype = np.dtype([(p, endian + dt) for p, dt in props])
        buf = fh.read(dtype.itemsize * count)
        if len(buf) < dtype.itemsize * count:
            got = len(buf) // dtype.itemsize
            raise PlyError(f"element {name!r} declares {count} entries, found {got}")
        if name == "vertex":
            arr = np.frombuffer(buf, dtype=dtype, count=count)
            return {p: arr[p] for p, _ in props}
    raise PlyError("no vertex data")


def save_ply(cloud: PointCloud, path, binary: bool = True) -> None:
    """Write positions (and normals when present) as float64 properties."""
    if len(cloud) == 0:
        raise ValueError("cannot save an empty cloud")
    props = ["x", "y", "z"]
    cols = [cloud.points]
    if cloud.normals is not None:
        props += ["nx", "ny", "nz"]
        cols.append(cloud.normals)
    data = np.hstack(cols)
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property double {p}" for p in props]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(data.astype("<f8").tobytes())
        else:
            for row in data:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
