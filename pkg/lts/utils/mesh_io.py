"""
Mesh import/export

Text layout (whitespace separated, one record per line):
    lts-mesh <version> <dim> <n_cells> <n_faces>
    <volume> <centroid x> [<centroid y>] <char_length>            (n_cells lines)
    <left> <right> <area> <normal...> <bc> <dl...> <dr...>          (n_faces lines)

Binary layout (little-endian) is documented in docs/FILE_FORMATS.md.
"""
import struct
from pathlib import Path
from typing import Union

import numpy as np

from lts.services.mesh_service import Mesh, _MeshBuilder

TEXT_MAGIC = "lts-mesh"
BINARY_MAGIC = b"LTSM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQQ")  # magic, version, dim, n_cells, n_faces


def _cell_dtype(dim: int) -> np.dtype:
    return np.dtype([("volume", "<f8"), ("centroid", "<f8", (dim,)), ("char_length", "<f8")])


def _face_dtype(dim: int) -> np.dtype:
    return np.dtype([
        ("left", "<i8"), ("right", "<i8"), ("area", "<f8"), ("normal", "<f8", (dim,)),
        ("bc", "<i8"), ("dl", "<f8", (dim,)), ("dr", "<f8", (dim,)),
    ])


def _rebuild(dim: int, cells: np.ndarray, faces: np.ndarray) -> Mesh:
    builder = _MeshBuilder(dim)
    for rec in cells:
        builder.add_cell(float(rec["volume"]), tuple(float(v) for v in rec["centroid"]), float(rec["char_length"]))
    for rec in faces:
        builder.faces.append((
            int(rec["left"]), int(rec["right"]), float(rec["area"]),
            tuple(float(v) for v in rec["normal"]), int(rec["bc"]),
            tuple(float(v) for v in rec["dl"]), tuple(float(v) for v in rec["dr"]),
        ))
    mesh = builder.build()
    mesh.check()
    return mesh


def _records(mesh: Mesh):
    cells = np.zeros(mesh.n_cells, dtype=_cell_dtype(mesh.dim))
    cells["volume"] = mesh.volume
    cells["centroid"] = mesh.centroid
    cells["char_length"] = mesh.char_length
    faces = np.zeros(mesh.n_faces, dtype=_face_dtype(mesh.dim))
    faces["left"] = mesh.face_left
    faces["right"] = mesh.face_right
    faces["area"] = mesh.face_area
    faces["normal"] = mesh.face_normal
    faces["bc"] = mesh.face_bc
    faces["dl"] = mesh.face_dl
    faces["dr"] = mesh.face_dr
    return cells, faces


def write_text(mesh: Mesh, path: Union[str, Path]) -> None:
    lines = [f"{TEXT_MAGIC} {FORMAT_VERSION} {mesh.dim} {mesh.n_cells} {mesh.n_faces}"]
    for c in range(mesh.n_cells):
        values = [mesh.volume[c], *mesh.centroid[c], mesh.char_length[c]]
        lines.append(" ".join(repr(float(v)) for v in values))
    for f in range(mesh.n_faces):
        head = f"{int(mesh.face_left[f])} {int(mesh.face_right[f])} {float(mesh.face_area[f])!r}"
        normal = " ".join(repr(float(v)) for v in mesh.face_normal[f])
        tail = " ".join(repr(float(v)) for v in (*mesh.face_dl[f], *mesh.face_dr[f]))
        lines.append(f"{head} {normal} {int(mesh.face_bc[f])} {tail}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_text(path: Union[str, Path]) -> Mesh:
    rows = Path(path).read_text(encoding="utf-8").split("\n")
    header = rows[0].split()
    if len(header) != 5 or header[0] != TEXT_MAGIC:
        raise ValueError(f"{path}: not an lts-mesh text file")
    if int(header[1]) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported mesh format version {header[1]}")
    dim, n_cells, n_faces = int(header[2]), int(header[3]), int(header[4])
    cells = np.zeros(n_cells, dtype=_cell_dtype(dim))
    for c in range(n_cells):
        values = [float(v) for v in rows[1 + c].split()]
        cells[c] = (values[0], values[1:1 + dim], values[1 + dim])
    faces = np.zeros(n_faces, dtype=_face_dtype(dim))
    for f in range(n_faces):
        parts = rows[1 + n_cells + f].split()
        normal = [float(v) for v in parts[3:3 + dim]]
        bc = int(parts[3 + dim])
        rest = [float(v) for v in parts[4 + dim:]]
        faces[f] = (int(parts[0]), int(parts[1]), float(parts[2]), normal, bc, rest[:dim], rest[dim:])
    return _rebuild(dim, cells, faces)


def write_binary(mesh: Mesh, path: Union[str, Path]) -> None:
    cells, faces = _records(mesh)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, FORMAT_VERSION, mesh.dim, mesh.n_cells, mesh.n_faces))
        fh.write(cells.tobytes())
        fh.write(faces.tobytes())


def read_binary(path: Union[str, Path]) -> Mesh:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated mesh file")
    magic, version, dim, n_cells, n_faces = _HEADER.unpack_from(blob, 0)
    if magic != BINARY_MAGIC or version != FORMAT_VERSION:
        raise ValueError(f"{path}: not an lts-mesh binary file (version {FORMAT_VERSION})")
    cell_dtype, face_dtype = _cell_dtype(dim), _face_dtype(dim)
    offset = _HEADER.size
    cells = np.frombuffer(blob, dtype=cell_dtype, count=n_cells, offset=offset)
    offset += n_cells * cell_dtype.itemsize
    faces = np.frombuffer(blob, dtype=face_dtype, count=n_faces, offset=offset)
    return _rebuild(dim, cells, faces)
