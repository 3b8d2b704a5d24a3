"""
Weighted mesh partitioning

Greedy region growing over the cell adjacency graph. Each part starts from
the lowest unassigned cell id and absorbs frontier cells in ascending id
order until it reaches its share of the remaining weight. Output depends
only on the mesh and the weights.
"""
import heapq
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from lts.services.mesh_service import Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    """Rank and CE of every cell, with the weights used to build them"""
    domain_of_cell: np.ndarray
    ce_of_cell: np.ndarray
    cell_weight: np.ndarray
    n_ranks: int
    n_ces: int

    def ces_of_rank(self, rank: int) -> List[int]:
        return sorted({int(c) for c in np.unique(self.ce_of_cell[self.domain_of_cell == rank])})

    def rank_of_ce(self, ce: int) -> int:
        cells = np.flatnonzero(self.ce_of_cell == ce)
        return int(self.domain_of_cell[cells[0]])


def level_weights(levels: np.ndarray, theta: int) -> np.ndarray:
    """Cell weight 2^(theta - tau): the number of times a cell is advanced per iteration"""
    return np.left_shift(1, theta - np.asarray(levels, dtype=np.int64))


def _grow(adjacency: List[List[int]], cells: Sequence[int], weights: np.ndarray, n_parts: int) -> dict:
    cells = sorted(int(c) for c in cells)
    if n_parts > len(cells):
        raise ValueError(f"cannot split {len(cells)} cells into {n_parts} parts")
    member = set(cells)
    owner = {}
    remaining_weight = int(sum(int(weights[c]) for c in cells))
    unassigned = list(cells)  # ascending, consumed lazily
    cursor = 0

    for part in range(n_parts):
        parts_left = n_parts - part
        if parts_left == 1:
            for c in cells:
                if c not in owner:
                    owner[c] = part
            break
        target = remaining_weight / parts_left
        # every later part still needs at least one cell
        cells_left = sum(1 for c in cells if c not in owner)
        max_cells = cells_left - (parts_left - 1)
        weight = 0
        count = 0
        frontier: List[int] = []
        queued = set()
        while count < max_cells:
            if not frontier:
                while cursor < len(unassigned) and unassigned[cursor] in owner:
                    cursor += 1
                if cursor == len(unassigned):
                    break
                if count > 0 and weight >= target:
                    break
                seed = unassigned[cursor]
                heapq.heappush(frontier, seed)
                queued.add(seed)
            candidate = frontier[0]
            w = int(weights[candidate])
            if count > 0 and abs(weight + w - target) > abs(weight - target):
                break
            heapq.heappop(frontier)
            owner[candidate] = part
            weight += w
            count += 1
            for nb in adjacency[candidate]:
                if nb in member and nb not in owner and nb not in queued:
                    heapq.heappush(frontier, nb)
                    queued.add(nb)
            if weight >= target:
                break
        remaining_weight -= weight
    return owner


def partition_mesh(mesh: Mesh, n_parts: int, weights: Optional[np.ndarray] = None,
                   cells: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Split cells into `n_parts` weight-balanced parts.

    Args:
        mesh: mesh whose face adjacency drives the growth
        n_parts: number of parts (>= 1)
        weights: positive integer weight per cell (default 1)
        cells: restrict to a subset of cells (others get -1)

    Returns:
        part id per cell
    """
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    weights = np.ones(mesh.n_cells, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    if weights.shape != (mesh.n_cells,) or np.any(weights <= 0):
        raise ValueError("weights must be one positive integer per cell")
    subset = range(mesh.n_cells) if cells is None else cells
    owner = _grow(mesh.adjacency(), subset, weights, n_parts)
    parts = np.full(mesh.n_cells, -1, dtype=np.int64)
    for c, p in owner.items():
        parts[c] = p
    return parts


def build_partition(mesh: Mesh, n_ranks: int, ces_per_rank: int,
                    weights: Optional[np.ndarray] = None) -> Partition:
    """Two-level decomposition: ranks first, then CEs inside every rank"""
    weights = np.ones(mesh.n_cells, dtype=np.int64) if weights is None else np.asarray(weights, dtype=np.int64)
    domain = partition_mesh(mesh, n_ranks, weights)
    ce = np.full(mesh.n_cells, -1, dtype=np.int64)
    for rank in range(n_ranks):
        rank_cells = np.flatnonzero(domain == rank)
        local = partition_mesh(mesh, ces_per_rank, weights, cells=rank_cells)
        ce[rank_cells] = rank * ces_per_rank + local[rank_cells]
    part_weights = np.bincount(ce, weights=weights, minlength=n_ranks * ces_per_rank)
    logger.info(
        f"[Partition] {n_ranks} rank(s) x {ces_per_rank} CE(s): weight min/mean/max "
        f"{part_weights.min():.0f}/{part_weights.mean():.1f}/{part_weights.max():.0f}"
    )
    return Partition(
        domain_of_cell=domain,
        ce_of_cell=ce,
        cell_weight=weights,
        n_ranks=n_ranks,
        n_ces=n_ranks * ces_per_rank,
    )
