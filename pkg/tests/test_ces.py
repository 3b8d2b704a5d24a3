import numpy as np
import pytest

from lts.services.ce_service import build_ces
from lts.services.partition_service import build_partition


def test_single_rank_line(line_mesh):
    ces = build_ces(line_mesh, build_partition(line_mesh, n_ranks=1, ces_per_rank=2))
    first, second = ces
    assert first.cells.tolist() == [0, 1, 2, 3]
    assert first.border_cells.tolist() == [0, 3]
    assert first.inner_cells.tolist() == [1, 2]
    assert first.intra_faces.tolist() == [0, 1, 2]
    # face 3 joins cells 3|4, face 7 is the periodic face 7|0
    assert {k: v.tolist() for k, v in first.inter_ce_faces.items()} == {1: [3, 7]}
    assert second.inter_ce_faces[0].tolist() == [3, 7]
    assert first.ghost_components == {}
    assert first.mpi_border_cells.size == 0


def test_ghosts_across_ranks(line_mesh):
    ces = build_ces(line_mesh, build_partition(line_mesh, n_ranks=2, ces_per_rank=1))
    first, second = ces
    assert (first.rank, second.rank) == (0, 1)
    assert first.foreign_ces == [1]
    assert first.ghost_components[1].tolist() == [4, 7]
    assert second.ghost_components[0].tolist() == [0, 3]
    assert first.mpi_border_cells.tolist() == [0, 3]


def test_components_cover_the_mesh(skewed_mesh):
    ces = build_ces(skewed_mesh, build_partition(skewed_mesh, n_ranks=2, ces_per_rank=3))
    cells = np.concatenate([np.concatenate([ce.inner_cells, ce.border_cells]) for ce in ces])
    assert np.array_equal(np.sort(cells), np.arange(skewed_mesh.n_cells))
    faces = [ce.intra_faces for ce in ces]
    for ce in ces:
        faces.extend(v for k, v in ce.inter_ce_faces.items() if k > ce.id)
    assert np.array_equal(np.sort(np.concatenate(faces)), np.arange(skewed_mesh.n_faces))
    for ce in ces:
        assert set(ce.mpi_border_cells.tolist()) <= set(ce.border_cells.tolist())

def test_partition_with_holes_rejected(line_mesh):
    partition = build_partition(line_mesh, n_ranks=1, ces_per_rank=2)
    broken = partition.__class__(
        domain_of_cell=partition.domain_of_cell, ce_of_cell=np.full(8, -1),
        cell_weight=partition.cell_weight, n_ranks=1, n_ces=2,
    )
    with pytest.raises(ValueError, match="unassigned"):
        build_ces(line_mesh, broken)
