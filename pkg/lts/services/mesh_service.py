"""
Mesh Service

Builds the unstructured cell/face representation used by every other
service, from a box description with refinement regions. Refined base
cells are split `scale` times per direction; edges shared by base cells
of different scales are split into as many faces as the finer side needs,
so a coarse cell sees several small faces towards its fine neighbours.

Periodic boundaries are stored as ordinary faces joining the two cells
across the box, with the face position expressed from each side.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from lts.schemas.mesh import MeshSpec

logger = logging.getLogger(__name__)

BOUNDARY = -1

BC_INTERIOR = 0
BC_PERIODIC = 1
BC_TRANSMISSIVE = 2

CLOSURE_TOLERANCE = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Mesh:
    """Immutable cell/face topology and geometry"""
    dim: int
    volume: np.ndarray  # (n_cells,)
    centroid: np.ndarray  # (n_cells, dim)
    char_length: np.ndarray  # (n_cells,)
    face_left: np.ndarray  # (n_faces,)
    face_right: np.ndarray  # (n_faces,), BOUNDARY for transmissive faces
    face_area: np.ndarray  # (n_faces,)
    face_normal: np.ndarray  # (n_faces, dim), unit, oriented left -> right
    face_bc: np.ndarray  # (n_faces,) BC_* tag
    face_dl: np.ndarray  # (n_faces, dim) left centroid -> face centre
    face_dr: np.ndarray  # (n_faces, dim) right centroid -> face centre (as seen by the right cell)
    cell_faces: np.ndarray  # (n_cells, K) face ids ascending, -1 padded
    cell_signs: np.ndarray  # (n_cells, K) +1 if the cell is left of the face, -1 if right, 0 padded
    cell_nbrs: np.ndarray  # (n_cells, K) neighbour across the face; the cell itself on boundary/padding

    @property
    def n_cells(self) -> int:
        return int(self.volume.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.face_area.shape[0])

    @property
    def max_faces(self) -> int:
        return int(self.cell_faces.shape[1])

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right != BOUNDARY)

    def neighbours(self, cell: int) -> List[int]:
        """Distinct face neighbours of a cell, in face order"""
        seen: List[int] = []
        for k in range(self.max_faces):
            nb = int(self.cell_nbrs[cell, k])
            if self.cell_faces[cell, k] >= 0 and nb != cell and nb not in seen:
                seen.append(nb)
        return seen

    def adjacency(self) -> List[List[int]]:
        return [self.neighbours(c) for c in range(self.n_cells)]

    def closure_defect(self) -> np.ndarray:
        """Per cell |sum over faces of sign * area * normal|"""
        total = np.zeros((self.n_cells, self.dim))
        for k in range(self.max_faces):
            faces = self.cell_faces[:, k]
            valid = faces >= 0
            safe = np.where(valid, faces, 0)
            term = (self.cell_signs[:, k] * self.face_area[safe])[:, None] * self.face_normal[safe]
            total += np.where(valid[:, None], term, 0.0)
        return np.abs(total).max(axis=1)

    def check(self) -> None:
        """Raise ValueError when a geometry invariant is broken"""
        if np.any(self.volume <= 0) or np.any(self.face_area <= 0) or np.any(self.char_length <= 0):
            raise ValueError("mesh has non-positive volumes, areas or lengths")
        refs = np.zeros(self.n_faces, dtype=np.int64)
        np.add.at(refs, self.cell_faces[self.cell_faces >= 0], 1)
        expected = np.where(self.face_right == BOUNDARY, 1, 2)
        if np.any(refs != expected):
            bad = int(np.flatnonzero(refs != expected)[0])
            raise ValueError(f"face {bad} referenced by {refs[bad]} cells, expected {expected[bad]}")
        defect = self.closure_defect()
        if np.any(defect > CLOSURE_TOLERANCE * np.maximum(1.0, self.face_area.max())):
            bad = int(np.argmax(defect))
            raise ValueError(f"cell {bad} is not closed (defect {defect[bad]:.3e})")


class _MeshBuilder:
    """Accumulates cells and faces, then freezes them into a Mesh"""

    def __init__(self, dim: int):
        self.dim = dim
        self.volume: List[float] = []
        self.centroid: List[Tuple[float, ...]] = []
        self.char_length: List[float] = []
        self.faces: List[Tuple[int, int, float, Tuple[float, ...], int, Tuple[float, ...], Tuple[float, ...]]] = []

    def add_cell(self, volume: float, centroid: Tuple[float, ...], char_length: float) -> int:
        self.volume.append(volume)
        self.centroid.append(centroid)
        self.char_length.append(char_length)
        return len(self.volume) - 1

    def add_face(self, left: int, right: int, area: float, normal: Tuple[float, ...],
                 center_left: Tuple[float, ...], center_right: Tuple[float, ...], bc: int) -> int:
        cl = self.centroid[left]
        dl = tuple(f - c for f, c in zip(center_left, cl))
        if right == BOUNDARY:
            dr = tuple(0.0 for _ in cl)
        else:
            cr = self.centroid[right]
            dr = tuple(f - c for f, c in zip(center_right, cr))
        self.faces.append((left, right, area, normal, bc, dl, dr))
        return len(self.faces) - 1

    def build(self) -> Mesh:
        n_cells = len(self.volume)
        per_cell: Dict[int, List[int]] = {c: [] for c in range(n_cells)}
        for fid, (left, right, *_rest) in enumerate(self.faces):
            per_cell[left].append(fid)
            if right != BOUNDARY:
                per_cell[right].append(fid)
        width = max(len(v) for v in per_cell.values())
        cell_faces = np.full((n_cells, width), -1, dtype=np.int64)
        cell_signs = np.zeros((n_cells, width))
        cell_nbrs = np.repeat(np.arange(n_cells, dtype=np.int64)[:, None], width, axis=1)
        for c, fids in per_cell.items():
            for k, fid in enumerate(sorted(fids)):
                left, right = self.faces[fid][0], self.faces[fid][1]
                cell_faces[c, k] = fid
                if left == c:
                    cell_signs[c, k] = 1.0
                    cell_nbrs[c, k] = right if right != BOUNDARY else c
                else:
                    cell_signs[c, k] = -1.0
                    cell_nbrs[c, k] = left
        return Mesh(
            dim=self.dim,
            volume=_frozen(np.array(self.volume, dtype=np.float64)),
            centroid=_frozen(np.array(self.centroid, dtype=np.float64).reshape(n_cells, self.dim)),
            char_length=_frozen(np.array(self.char_length, dtype=np.float64)),
            face_left=_frozen(np.array([f[0] for f in self.faces], dtype=np.int64)),
            face_right=_frozen(np.array([f[1] for f in self.faces], dtype=np.int64)),
            face_area=_frozen(np.array([f[2] for f in self.faces], dtype=np.float64)),
            face_normal=_frozen(np.array([f[3] for f in self.faces], dtype=np.float64).reshape(-1, self.dim)),
            face_bc=_frozen(np.array([f[4] for f in self.faces], dtype=np.int64)),
            face_dl=_frozen(np.array([f[5] for f in self.faces], dtype=np.float64).reshape(-1, self.dim)),
            face_dr=_frozen(np.array([f[6] for f in self.faces], dtype=np.float64).reshape(-1, self.dim)),
            cell_faces=_frozen(cell_faces),
            cell_signs=_frozen(cell_signs),
            cell_nbrs=_frozen(cell_nbrs),
        )


def _base_scales(spec: MeshSpec) -> np.ndarray:
    """Refinement factor of every base cell; conflicting regions are rejected"""
    nx, ny = spec.nx, spec.ny if spec.dim == 2 else 1
    hx = (spec.x1 - spec.x0) / nx
    hy = (spec.y1 - spec.y0) / ny
    scales = np.ones((nx, ny), dtype=np.int64)
    for i in range(nx):
        for j in range(ny):
            cx = spec.x0 + (i + 0.5) * hx
            cy = spec.y0 + (j + 0.5) * hy if spec.dim == 2 else None
            hits = {r.scale for r in spec.refinements if r.contains(cx, cy)}
            if len(hits) > 1:
                raise ValueError(
                    f"overlapping refinement regions with conflicting scales {sorted(hits)} "
                    f"at base cell ({i}, {j})"
                )
            if hits:
                scales[i, j] = hits.pop()
    return scales


def _generate_1d(spec: MeshSpec, scales: np.ndarray) -> Mesh:
    builder = _MeshBuilder(dim=1)
    h_base = (spec.x1 - spec.x0) / spec.nx
    for i in range(spec.nx):
        r = int(scales[i, 0])
        h = h_base / r
        for a in range(r):
            x = spec.x0 + i * h_base + (a + 0.5) * h
            builder.add_cell(h, (x,), h)
    n = len(builder.volume)
    edges = [spec.x0]
    for c in range(n):
        edges.append(builder.centroid[c][0] + 0.5 * builder.volume[c])
    periodic = spec.boundary == "periodic"
    if not periodic:
        builder.add_face(0, BOUNDARY, 1.0, (-1.0,), (spec.x0,), (spec.x0,), BC_TRANSMISSIVE)
    for c in range(n - 1):
        builder.add_face(c, c + 1, 1.0, (1.0,), (edges[c + 1],), (edges[c + 1],), BC_INTERIOR)
    if periodic:
        if n == 1:
            raise ValueError("a periodic 1D mesh needs at least 2 cells")
        builder.add_face(n - 1, 0, 1.0, (1.0,), (spec.x1,), (spec.x0,), BC_PERIODIC)
    else:
        builder.add_face(n - 1, BOUNDARY, 1.0, (1.0,), (spec.x1,), (spec.x1,), BC_TRANSMISSIVE)
    return builder.build()


def _generate_2d(spec: MeshSpec, scales: np.ndarray) -> Mesh:
    builder = _MeshBuilder(dim=2)
    nx, ny = spec.nx, spec.ny
    lx, ly = spec.x1 - spec.x0, spec.y1 - spec.y0
    hx, hy = lx / nx, ly / ny
    periodic = spec.boundary == "periodic"
    if periodic and (nx < 2 or ny < 2):
        raise ValueError("a periodic 2D mesh needs at least 2 base cells per direction")

    # cell ids per base cell, indexed [a][b] (x sub-index, y sub-index)
    ids: Dict[Tuple[int, int], List[List[int]]] = {}
    for j in range(ny):
        for i in range(nx):
            r = int(scales[i, j])
            sx, sy = hx / r, hy / r
            grid = [[0] * r for _ in range(r)]
            for b in range(r):
                for a in range(r):
                    cx = spec.x0 + i * hx + (a + 0.5) * sx
                    cy = spec.y0 + j * hy + (b + 0.5) * sy
                    grid[a][b] = builder.add_cell(sx * sy, (cx, cy), min(sx, sy))
            ids[(i, j)] = grid

    for j in range(ny):
        for i in range(nx):
            r = int(scales[i, j])
            grid = ids[(i, j)]
            sx, sy = hx / r, hy / r
            bx, by = spec.x0 + i * hx, spec.y0 + j * hy
            # faces inside the base cell
            for b in range(r):
                for a in range(r - 1):
                    center = (bx + (a + 1) * sx, by + (b + 0.5) * sy)
                    builder.add_face(grid[a][b], grid[a + 1][b], sy, (1.0, 0.0), center, center, BC_INTERIOR)
            for b in range(r - 1):
                for a in range(r):
                    center = (bx + (a + 0.5) * sx, by + (b + 1) * sy)
                    builder.add_face(grid[a][b], grid[a][b + 1], sx, (0.0, 1.0), center, center, BC_INTERIOR)

            # east edge
            if i + 1 < nx or periodic:
                ie = (i + 1) % nx
                rn = int(scales[ie, j])
                other = ids[(ie, j)]
                split = max(r, rn)
                shift = -lx if i + 1 == nx else 0.0
                bc = BC_PERIODIC if i + 1 == nx else BC_INTERIOR
                for k in range(split):
                    yc = by + (k + 0.5) * hy / split
                    center = (bx + hx, yc)
                    builder.add_face(
                        grid[r - 1][k * r // split], other[0][k * rn // split], hy / split,
                        (1.0, 0.0), center, (center[0] + shift, yc), bc,
                    )
            else:
                for b in range(r):
                    center = (bx + hx, by + (b + 0.5) * sy)
                    builder.add_face(grid[r - 1][b], BOUNDARY, sy, (1.0, 0.0), center, center, BC_TRANSMISSIVE)
            if i == 0 and not periodic:
                for b in range(r):
                    center = (bx, by + (b + 0.5) * sy)
                    builder.add_face(grid[0][b], BOUNDARY, sy, (-1.0, 0.0), center, center, BC_TRANSMISSIVE)

            # north edge
            if j + 1 < ny or periodic:
                jn = (j + 1) % ny
                rn = int(scales[i, jn])
                other = ids[(i, jn)]
                split = max(r, rn)
                shift = -ly if j + 1 == ny else 0.0
                bc = BC_PERIODIC if j + 1 == ny else BC_INTERIOR
                for k in range(split):
                    xc = bx + (k + 0.5) * hx / split
                    center = (xc, by + hy)
                    builder.add_face(
                        grid[k * r // split][r - 1], other[k * rn // split][0], hx / split,
                        (0.0, 1.0), center, (xc, center[1] + shift), bc,
                    )
            else:
                for a in range(r):
                    center = (bx + (a + 0.5) * sx, by + hy)
                    builder.add_face(grid[a][r - 1], BOUNDARY, sx, (0.0, 1.0), center, center, BC_TRANSMISSIVE)
            if j == 0 and not periodic:
                for a in range(r):
                    center = (bx + (a + 0.5) * sx, by)
                    builder.add_face(grid[a][0], BOUNDARY, sx, (0.0, -1.0), center, center, BC_TRANSMISSIVE)

    return builder.build()


def generate_mesh(spec: MeshSpec) -> Mesh:
    """
    Build a mesh from a box spec.

    Args:
        spec: box extents, base resolution, refinement regions, dimension

    Returns:
        Mesh with checked geometry invariants

    Raises:
        ValueError: conflicting refinement regions or degenerate periodic box
    """
    scales = _base_scales(spec)
    mesh = _generate_1d(spec, scales) if spec.dim == 1 else _generate_2d(spec, scales)
    mesh.check()
    logger.info(
        f"[Mesh] Generated {spec.dim}D mesh: {mesh.n_cells} cells, {mesh.n_faces} faces "
        f"({int(np.count_nonzero(scales > 1))} refined base cells)"
    )
    return mesh
