from concurrent.futures import ThreadPoolExecutor

import numpy as np

from lts.services.adaptive_service import smooth_levels
from lts.services.ce_service import build_ces
from lts.services.exchange_service import GhostExchange, GhostLink, build_exchange_plan
from lts.services.partition_service import build_partition
from lts.services.transport_service import make_transports

from tests.conftest import make_state


def _two_rank_line(line_mesh):
    partition = build_partition(line_mesh, n_ranks=2, ces_per_rank=1)
    return partition, build_ces(line_mesh, partition)


def test_plan_lists_ghosts_both_ways(line_mesh):
    partition, ces = _two_rank_line(line_mesh)
    plan = build_exchange_plan(ces, partition, rank=0)
    assert [(l.local_ce, l.foreign_ce, l.peer_rank, l.cells.tolist()) for l in plan.recvs] == [(0, 1, 1, [4, 7])]
    assert [(l.local_ce, l.foreign_ce, l.peer_rank, l.cells.tolist()) for l in plan.sends] == [(1, 0, 1, [0, 3])]


def test_single_rank_plan_is_empty(line_mesh):
    partition = build_partition(line_mesh, n_ranks=1, ces_per_rank=2)
    plan = build_exchange_plan(build_ces(line_mesh, partition), partition, rank=0)
    assert plan.sends == [] and plan.recvs == []


def test_link_selects_by_level_mask():
    link = GhostLink(local_ce=0, foreign_ce=1, peer_rank=1, cells=np.array([2, 5, 9]))
    levels = np.zeros(10, dtype=np.int64)
    levels[[2, 5, 9]] = [0, 2, 3]
    assert link.select(levels, 0b0001).tolist() == [2]
    assert link.select(levels, 0b1100).tolist() == [5, 9]
    assert link.select(levels, 0).size == 0


def test_distributed_smoothing_matches_global(line_mesh):
    partition, ces = _two_rank_line(line_mesh)
    raw = np.array([3, 3, 3, 3, 3, 3, 3, 0])
    expected, _ = smooth_levels(raw, line_mesh)
    transports = make_transports("loopback", 2)

    def rank_main(transport):
        state = make_state(line_mesh)
        plan = build_exchange_plan(ces, partition, transport.rank)
        exchange = GhostExchange(plan, transport, state)
        local = partition.domain_of_cell == transport.rank
        levels = np.where(local, raw, -1)
        return local, exchange.smooth_levels(levels, local, theta_max=3)

    with ThreadPoolExecutor(2) as pool:
        results = list(pool.map(rank_main, transports))
    assert expected.tolist() == [1, 2, 3, 3, 3, 2, 1, 0]
    for local, (levels, theta) in results:
        assert theta == 3
        assert np.array_equal(levels[local], expected[local])


def test_allreduce_min_goes_through_transport(line_mesh):
    partition, ces = _two_rank_line(line_mesh)
    transports = make_transports("loopback", 2)

    def rank_main(transport):
        exchange = GhostExchange(build_exchange_plan(ces, partition, transport.rank), transport,
                                 make_state(line_mesh))
        return exchange.allreduce_min(0.5 + transport.rank)

    with ThreadPoolExecutor(2) as pool:
        assert list(pool.map(rank_main, transports)) == [0.5, 0.5]
