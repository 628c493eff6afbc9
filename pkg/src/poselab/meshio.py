"""Minimal OBJ and PLY readers/writers for triangle meshes and point clouds.

OBJ: `v` and `f` records only; polygon faces are fan-triangulated. PLY: ASCII
or binary little-endian, vertex coordinates in float32/float64, faces as a
uchar/int count followed by int indices.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


def load_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    """Load (vertices, faces) from an .obj or .ply file by extension."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".obj":
        return load_obj(p)
    if suffix == ".ply":
        return load_ply_mesh(p)
    raise ValueError(f"unsupported mesh format {suffix!r} (expected .obj or .ply)")


def load_obj(path) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not vertices:
        raise ValueError(f"no vertices found in {path}")
    return np.array(vertices, dtype=float), np.array(faces, dtype=int).reshape(-1, 3)


def save_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices, float)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, int)]
    Path(path).write_text("\n".join(lines) + "\n")


_PLY_TYPES = {
    "float": ("f", 4),
    "float32": ("f", 4),
    "double": ("d", 8),
    "float64": ("d", 8),
    "uchar": ("B", 1),
    "uint8": ("B", 1),
    "char": ("b", 1),
    "int8": ("b", 1),
    "short": ("h", 2),
    "int16": ("h", 2),
    "ushort": ("H", 2),
    "uint16": ("H", 2),
    "int": ("i", 4),
    "int32": ("i", 4),
    "uint": ("I", 4),
    "uint32": ("I", 4),
}


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError("not a PLY file (missing end_header)")
    header = data[: end + len(b"end_header\n")].decode("ascii")
    body = data[end + len(b"end_header\n") :]
    lines = [ln.strip() for ln in header.splitlines() if ln.strip()]
    if lines[0] != "ply":
        raise ValueError("not a PLY file (missing magic)")
    fmt = None
    elements = []  # (name, count, [(prop_type_or_list, prop_name)])
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ValueError("PLY property before any element")
            if parts[1] == "list":
                elements[-1][2].append((("list", parts[2], parts[3]), parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body


def _read_ply(path):
    data = Path(path).read_bytes()
    fmt, elements, body = _parse_ply_header(data)
    out: dict[str, dict] = {}
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for ptype, pname in props:
                    if isinstance(ptype, tuple):
                        n = int(tokens[pos])
                        pos += 1
                        row[pname] = [float(tokens[pos + i]) for i in range(n)]
                        pos += n
                    else:
                        row[pname] = float(tokens[pos])
                        pos += 1
                rows.append(row)
            out[name] = {"rows": rows}
        return out
    offset = 0
    for name, count, props in elements:
        rows = []
        for _ in range(count):
            row = {}
            for ptype, pname in props:
                if isinstance(ptype, tuple):
                    _, count_t, item_t = ptype
                    cfmt, csize = _PLY_TYPES[count_t]
                    (n,) = struct.unpack_from("<" + cfmt, body, offset)
                    offset += csize
                    ifmt, isize = _PLY_TYPES[item_t]
                    row[pname] = list(
                        struct.unpack_from("<" + ifmt * int(n), body, offset)
                    )
                    offset += isize * int(n)
                else:
                    pfmt, psize = _PLY_TYPES[ptype]
                    (row[pname],) = struct.unpack_from("<" + pfmt, body, offset)
                    offset += psize
            rows.append(row)
        out[name] = {"rows": rows}
    return out


def load_ply_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    parsed = _read_ply(path)
    if "vertex" not in parsed:
        raise ValueError(f"{path}: PLY has no vertex element")
    verts = np.array(
        [[r["x"], r["y"], r["z"]] for r in parsed["vertex"]["rows"]], dtype=float
    )
    faces: list[list[int]] = []
    if "face" in parsed:
        for r in parsed["face"]["rows"]:
            idx = [int(i) for i in next(iter(r.values()))]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return verts, np.array(faces, dtype=int).reshape(-1, 3)


def load_ply_points(path) -> np.ndarray:
    verts, _ = load_ply_mesh(path)
    return verts


def save_ply_points(path, points: np.ndarray, binary: bool = True) -> None:
    pts = np.asarray(points, dtype="<f8").reshape(-1, 3)
    header = (
        "ply\n"
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0\n"
        f"element vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.tobytes())
        else:
            for x, y, z in pts:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n".encode("ascii"))
