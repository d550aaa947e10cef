"""OBJ / PLY reading and OBJ writing."""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import DegenerateMeshError, MeshFileNotFoundError, UnsupportedFormatError
from .mesh import TriangleMesh


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) >= 3:
                    faces.extend(_fan(idx))
    return verts, faces


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise UnsupportedFormatError(f"{path}: missing 'ply' magic")
        fmt = None
        elements = []  # (name, count, [(prop, type, list_count_type or None)])
        while True:
            line = fh.readline()
            if not line:
                raise UnsupportedFormatError(f"{path}: truncated PLY header")
            tok = line.decode("ascii", "replace").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                elements.append((tok[1], int(tok[2]), []))
            elif tok[0] == "property":
                if tok[1] == "list":
                    elements[-1][2].append((tok[4], tok[3], tok[2]))
                else:
                    elements[-1][2].append((tok[2], tok[1], None))
            elif tok[0] == "end_header":
                break
        if fmt not in ("ascii", "binary_little_endian"):
            raise UnsupportedFormatError(f"{path}: unsupported PLY format {fmt!r}")

        verts, faces = [], []
        if fmt == "ascii":
            words = fh.read().decode("ascii", "replace").split()
            pos = 0
            for name, count, props in elements:
                for _ in range(count):
                    rec = {}
                    for pname, ptype, ltype in props:
                        if ltype is None:
                            rec[pname] = float(words[pos])
                            pos += 1
                        else:
                            k = int(words[pos])
                            rec[pname] = [int(w) for w in words[pos + 1:pos + 1 + k]]
                            pos += 1 + k
                    _collect(name, rec, verts, faces)
        else:
            data = fh.read()
            pos = 0
            for name, count, props in elements:
                if all(l is None for _, _, l in props):
                    # fixed-size records: decode the block at once
                    dt = np.dtype([(p, "<" + _PLY_TYPES[t]) for p, t, _ in props])
                    block = np.frombuffer(data, dtype=dt, count=count, offset=pos)
                    pos += dt.itemsize * count
                    if name == "vertex":
                        verts.extend(np.stack([block["x"], block["y"], block["z"]], axis=1).astype(float).tolist())
                    continue
                for _ in range(count):
                    rec = {}
                    for pname, ptype, ltype in props:
                        if ltype is None:
                            c = _PLY_TYPES[ptype]
                            rec[pname] = struct.unpack_from("<" + c, data, pos)[0]
                            pos += struct.calcsize(c)
                        else:
                            lc, c = _PLY_TYPES[ltype], _PLY_TYPES[ptype]
                            k = struct.unpack_from("<" + lc, data, pos)[0]
                            pos += struct.calcsize(lc)
                            rec[pname] = list(struct.unpack_from(f"<{k}{c}", data, pos))
                            pos += k * struct.calcsize(c)
                    _collect(name, rec, verts, faces)
    return verts, faces


def _collect(name, rec, verts, faces):
    if name == "vertex":
        verts.append([rec["x"], rec["y"], rec["z"]])
    elif name == "face":
        idx = rec.get("vertex_indices", rec.get("vertex_index"))
        if idx is not None and len(idx) >= 3:
            faces.extend(_fan(list(idx)))


def load_mesh(path) -> TriangleMesh:
    """Read an OBJ or PLY file; polygons are fan-triangulated, vertex order kept."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MeshFileNotFoundError(f"no such mesh file: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        verts, faces = _read_obj(path)
    elif ext == ".ply":
        verts, faces = _read_ply(path)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported mesh extension {ext!r}")
    faces = [f for f in faces if len(set(f)) == 3]
    try:
        mesh = TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    if len(mesh.faces) == 0 or not mesh.area > 0:
        raise DegenerateMeshError(f"{path}: mesh has zero surface area")
    return mesh


def save_obj(path, mesh: TriangleMesh | None = None, groups=None) -> None:
    """Write ``mesh``, or a list of ``(name, mesh)`` pairs as OBJ groups."""
    if groups is None:
        groups = [(None, mesh)]
    lines, off = [], 1
    for name, m in groups:
        if name is not None:
            lines.append(f"g {name}")
        lines.extend("v %.17g %.17g %.17g" % tuple(v) for v in m.vertices)
        lines.extend("f %d %d %d" % tuple(f + off) for f in m.faces)
        off += len(m.vertices)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
