import numpy as np
import pytest

from lts.services.partition_service import build_partition, level_weights, partition_mesh


def test_line_splits_into_contiguous_halves(line_mesh):
    parts = partition_mesh(line_mesh, 2)
    assert parts.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_partition_is_deterministic(skewed_mesh):
    a = partition_mesh(skewed_mesh, 6)
    b = partition_mesh(skewed_mesh, 6)
    assert np.array_equal(a, b)
    assert set(np.unique(a).tolist()) == set(range(6))


def test_weights_shift_the_split(line_mesh):
    weights = np.array([4, 4, 1, 1, 1, 1, 1, 1])
    parts = partition_mesh(line_mesh, 2, weights)
    assert np.bincount(parts, weights=weights).tolist() == [8.0, 6.0]


def test_level_weights():
    assert level_weights(np.array([0, 1, 2]), 2).tolist() == [4, 2, 1]


def test_two_level_partition(skewed_mesh):
    partition = build_partition(skewed_mesh, n_ranks=2, ces_per_rank=4)
    assert partition.n_ces == 8
    assert partition.ces_of_rank(0) == [0, 1, 2, 3]
    assert partition.ces_of_rank(1) == [4, 5, 6, 7]
    for ce in range(8):
        assert partition.rank_of_ce(ce) == ce // 4


def test_bad_requests_rejected(line_mesh):
    with pytest.raises(ValueError):
        partition_mesh(line_mesh, 0)
    with pytest.raises(ValueError):
        partition_mesh(line_mesh, 9)
    with pytest.raises(ValueError):
        partition_mesh(line_mesh, 2, np.zeros(8))
