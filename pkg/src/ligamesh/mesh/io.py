"""ASCII OBJ and binary little-endian PLY readers and writers."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import InvalidMesh
from .core import TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if len(idx) != 3:
                    raise InvalidMesh(f"{path}: only triangular faces are supported")
                faces.append(idx)
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path) -> TriMesh:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise InvalidMesh(f"{path}: not a PLY file")
        elements = []
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise InvalidMesh(f"{path}: truncated PLY header")
            parts = line.decode("ascii").split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                elements[-1][2].append(parts[1:])
            elif parts[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise InvalidMesh(f"{path}: only binary_little_endian PLY is supported, got {fmt}")
        verts = np.zeros((0, 3))
        faces = np.zeros((0, 3), dtype=np.int64)
        for name, count, props in elements:
            fields = []
            for p in props:
                if p[0] == "list":
                    fields.append((p[3], "<" + _PLY_TYPES[p[1]]))
                    fields.append((p[3] + "_", "<" + _PLY_TYPES[p[2]], (3,)))
                else:
                    fields.append((p[1], "<" + _PLY_TYPES[p[0]]))
            dtype = np.dtype(fields)
            data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            if name == "vertex":
                verts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
            elif name == "face":
                key = next(p[3] for p in props if p[0] == "list")
                if np.any(data[key] != 3):
                    raise InvalidMesh(f"{path}: only triangular faces are supported")
                faces = data[key + "_"].astype(np.int64)
    return TriMesh(verts, faces)


def write_ply(mesh: TriMesh, path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\nend_header\n"
    ).encode("ascii")
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(mesh.n_triangles, dtype=face_dtype)
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mesh.vertices.astype("<f4").tobytes())
        fh.write(faces.tobytes())


def load_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_ply(path)
    raise InvalidMesh(f"unsupported mesh format: {path}")


def save_mesh(mesh: TriMesh, path) -> None:
    """Write OBJ or PLY by suffix, creating parent directories."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(mesh, path)
    elif suffix == ".ply":
        write_ply(mesh, path)
    else:
        raise InvalidMesh(f"unsupported mesh format: {path}")
