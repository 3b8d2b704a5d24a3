"""
Computation Element construction

A CE is the task granularity of the solver: a subdomain split into inner
cells, border cells (one ring touching another CE or rank), faces internal
to the CE, inter-CE faces per neighbour CE and, for neighbours owned by
another rank, a ghost component mirroring that neighbour's MPI-border cells.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from lts.services.mesh_service import BOUNDARY, Mesh
from lts.services.partition_service import Partition

logger = logging.getLogger(__name__)

BORDER = "border"
INNER = "inner"
CELL_COMPONENTS = (BORDER, INNER)


@dataclass
class ComputationElement:
    id: int
    rank: int
    cells: np.ndarray
    inner_cells: np.ndarray
    border_cells: np.ndarray
    intra_faces: np.ndarray
    inter_ce_faces: Dict[int, np.ndarray] = field(default_factory=dict)
    mpi_border_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # foreign CE -> foreign cell ids mirrored locally
    ghost_components: Dict[int, np.ndarray] = field(default_factory=dict)

    def component_cells(self, component: str) -> np.ndarray:
        return self.border_cells if component == BORDER else self.inner_cells

    @property
    def neighbour_ces(self) -> List[int]:
        return sorted(self.inter_ce_faces)

    @property
    def foreign_ces(self) -> List[int]:
        return sorted(self.ghost_components)


def build_ces(mesh: Mesh, partition: Partition) -> List[ComputationElement]:
    """
    Build every CE of the partition (all ranks).

    Inter-CE faces are listed on both sides; ghost components exist only for
    CE pairs that straddle a rank boundary.
    """
    ce_of = partition.ce_of_cell
    rank_of = partition.domain_of_cell
    if np.any(ce_of < 0) or np.any(rank_of < 0):
        raise ValueError("partition leaves cells unassigned")

    left = mesh.face_left
    right = mesh.face_right
    interior = right != BOUNDARY
    ce_left = ce_of[left]
    ce_right = np.where(interior, ce_of[np.where(interior, right, 0)], ce_left)

    border_mask = np.zeros(mesh.n_cells, dtype=bool)
    mpi_mask = np.zeros(mesh.n_cells, dtype=bool)
    crossing = interior & (ce_left != ce_right)
    border_mask[left[crossing]] = True
    border_mask[right[crossing]] = True
    rank_crossing = crossing & (rank_of[left] != rank_of[np.where(interior, right, 0)])
    mpi_mask[left[rank_crossing]] = True
    mpi_mask[right[rank_crossing]] = True

    ces: List[ComputationElement] = []
    for ce_id in range(partition.n_ces):
        cells = np.flatnonzero(ce_of == ce_id)
        if cells.size == 0:
            raise ValueError(f"CE {ce_id} is empty")
        ranks = np.unique(rank_of[cells])
        if ranks.size != 1:
            raise ValueError(f"CE {ce_id} spans ranks {ranks.tolist()}")
        rank = int(ranks[0])
        intra = np.flatnonzero((ce_left == ce_id) & (ce_right == ce_id))
        inter: Dict[int, List[int]] = {}
        for f in np.flatnonzero(crossing & ((ce_left == ce_id) | (ce_right == ce_id))):
            other = int(ce_right[f]) if ce_left[f] == ce_id else int(ce_left[f])
            inter.setdefault(other, []).append(int(f))
        ghosts: Dict[int, np.ndarray] = {}
        for other, faces in inter.items():
            if partition.rank_of_ce(other) == rank:
                continue
            foreign = set()
            for f in faces:
                c = int(left[f]) if ce_left[f] == other else int(right[f])
                foreign.add(c)
            ghosts[other] = np.array(sorted(foreign), dtype=np.int64)
        ces.append(ComputationElement(
            id=ce_id,
            rank=rank,
            cells=cells,
            inner_cells=cells[~border_mask[cells]],
            border_cells=cells[border_mask[cells]],
            intra_faces=intra,
            inter_ce_faces={k: np.array(v, dtype=np.int64) for k, v in sorted(inter.items())},
            mpi_border_cells=cells[mpi_mask[cells]],
            ghost_components=ghosts,
        ))

    n_ghost = sum(len(ce.ghost_components) for ce in ces)
    logger.info(
        f"[CE] Built {len(ces)} CE(s): {int(border_mask.sum())} border cells, "
        f"{int(crossing.sum())} inter-CE faces, {n_ghost} ghost component(s)"
    )
    return ces
