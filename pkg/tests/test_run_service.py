import math
import socket

import numpy as np
import pytest

from lts.config import settings
from lts.errors import NumericalBlowUp
from lts.schemas.mesh import MeshSpec
from lts.schemas.run_config import RunConfig
from lts.services.adaptive_service import LevelMap
from lts.services.mesh_service import generate_mesh
from lts.services.run_service import RunService, build_problem, run_global_heun
from lts.utils.snapshot_io import compare_snapshots, max_relative_difference, read_snapshot, write_snapshot
from lts.utils.trace_io import read_trace, state_totals

SKEWED = dict(dim=2, nx=8, ny=8, refine="0.0:0.5:0.0:0.5:4", velocity="1.0,1.0",
              initial="sine", theta_max=3, iterations=2)


@pytest.fixture(scope="module")
def reference():
    return RunService(RunConfig(mode="reference", **SKEWED)).run()


def test_reference_run(reference):
    assert len(reference.summaries) == 2
    assert [s.theta for s in reference.summaries] == [2, 2]
    assert all(s.cost_ratio > 1.0 for s in reference.summaries)
    assert reference.conservation_defect <= 1e-12
    assert reference.time > 0.0
    assert {row.tau for row in reference.level_rows} == {0, 1, 2}


@pytest.mark.parametrize("options", [
    dict(ces=4, workers="2x1"),
    dict(ces=4, workers="1x2", scheduler="fifo", pack=False),
    dict(ces=6, workers="3x1", repartition_every=1),
    dict(ces=4, workers="2x1", hold_insertion=False),
])
def test_tasks_mode_matches_reference(reference, options):
    result = RunService(RunConfig(mode="tasks", **SKEWED, **options)).run()
    assert max_relative_difference(result.w, reference.w) <= 1e-12
    assert result.conservation_defect <= 1e-12
    assert result.time == reference.time
    assert len(result.dag_stats) == 2
    assert all(d.elementary_tasks >= d.inserted_packs > 0 for d in result.dag_stats)


@pytest.mark.parametrize("options", [
    dict(ranks=2, ces=2, workers="2x1"),
    dict(ranks=3, ces=1, workers="1x1", scheduler="fifo", pack=False),
])
def test_dist_mode_matches_reference(reference, options):
    result = RunService(RunConfig(mode="dist", transport="loopback", **SKEWED, **options)).run()
    assert max_relative_difference(result.w, reference.w) <= 1e-12
    assert result.conservation_defect <= 1e-12
    assert result.time == reference.time
    assert all(d.comm_tasks > 0 for d in result.dag_stats)
    assert [s.total_extensive for s in result.summaries] == pytest.approx(
        [s.total_extensive for s in reference.summaries], rel=1e-12)


def test_symbolic_run_keeps_initial_state():
    config = RunConfig(mode="tasks", symbolic=True, ces=4, **SKEWED)
    _, state = build_problem(config)
    result = RunService(config).run()
    assert np.array_equal(result.w, state.w)
    assert result.time == 0.0
    assert result.dag_stats[0].elementary_tasks > 0


def test_single_level_run_matches_global_heun():
    config = RunConfig(dim=1, nx=16, initial="sine", theta_max=3, iterations=3, mode="reference")
    adaptive = RunService(config).run()
    heun = run_global_heun(config, 3)
    assert np.array_equal(adaptive.w, heun.w)
    assert adaptive.time == heun.time


def test_outputs_are_written(tmp_path):
    paths = {name: str(tmp_path / name) for name in ("snap.csv", "trace.jsonl", "summary.csv",
                                                      "levels.csv", "dag.csv")}
    config = RunConfig(mode="tasks", ces=4, workers="2x1", snapshot=paths["snap.csv"],
                       trace=paths["trace.jsonl"], summary=paths["summary.csv"],
                       level_stats=paths["levels.csv"], dag_stats=paths["dag.csv"], **SKEWED)
    result = RunService(config).run()
    snapshot = read_snapshot(paths["snap.csv"])
    assert list(snapshot.columns) == ["cell", "x", "y", "w", "W"]
    assert np.array_equal(snapshot["w"].to_numpy(), result.w)
    events, samples = read_trace(paths["trace.jsonl"])
    assert len(events) == len(result.trace) > 0
    assert samples
    totals = state_totals(events)
    assert set(totals["state"]) <= {"executing", "sleeping", "overhead"}
    for name in ("summary.csv", "levels.csv", "dag.csv"):
        assert (tmp_path / name).read_text().count("\n") >= 3


def test_non_finite_total_aborts():
    service = RunService(RunConfig())
    levelmap = LevelMap(tau_of_cell=np.zeros(4, dtype=np.int64), theta=0, dt_min=0.1)
    with pytest.raises(NumericalBlowUp, match="iteration=5"):
        service._summary(5, 0, 0.0, levelmap, float("nan"))


def _free_port_pair():
    for _ in range(50):
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        if port + 1 > 65535:
            continue
        with socket.socket() as first, socket.socket() as second:
            try:
                first.bind(("127.0.0.1", port))
                second.bind(("127.0.0.1", port + 1))
            except OSError:
                continue
        return port
    pytest.skip("no two consecutive free ports")


def test_socket_dist_mode_matches_reference(reference, monkeypatch):
    monkeypatch.setattr(settings, "SOCKET_BASE_PORT", _free_port_pair())
    result = RunService(RunConfig(mode="dist", transport="socket", ranks=2, ces=2, workers="2x1",
                                  **SKEWED)).run()
    assert max_relative_difference(result.w, reference.w) <= 1e-12
    assert result.conservation_defect <= 1e-12
    assert result.time == reference.time


def test_packing_ratio_on_the_benchmark_mesh():
    config = RunConfig(mode="tasks", symbolic=True, dim=2, nx=16, ny=16, refine="0.0:0.5:0.0:0.5:4",
                       velocity="1.0,1.0", theta_max=3, iterations=1, ces=32, workers="2x1")
    stats = RunService(config).run().dag_stats[0]
    assert stats.n_ces == 32
    assert stats.elementary_tasks / stats.inserted_packs >= 3.0


@pytest.mark.parametrize("options", [
    dict(),
    dict(refine="0.25:0.75:4", theta_max=0),
])
def test_single_level_matches_global_heun_for_twenty_iterations(options):
    config = RunConfig(dim=1, nx=16, initial="sine", iterations=20, mode="reference", **options)
    adaptive = RunService(config).run()
    heun = run_global_heun(config, 20)
    assert all(s.theta == 0 for s in adaptive.summaries)
    assert np.array_equal(adaptive.w, heun.w)
    assert adaptive.time == heun.time

    tasks = RunService(config.model_copy(update=dict(mode="tasks", ces=4, workers="2x1"))).run()
    assert max_relative_difference(tasks.w, heun.w) <= 1e-12


def test_adaptive_scheme_converges():
    errors = []
    for nx in (32, 64, 128):
        config = RunConfig(dim=1, nx=nx, refine="0.25:0.75:2", initial="sine", theta_max=3,
                           iterations=nx // 4, mode="reference")
        result = RunService(config).run()
        x = result.mesh.centroid[:, 0]
        exact = 1.0 + 0.5 * np.sin(2.0 * math.pi * (x - result.time))
        errors.append(float(np.sum(np.abs(result.w - exact) * result.mesh.volume)))
    orders = [math.log2(coarse / fine) for coarse, fine in zip(errors, errors[1:])]
    assert min(orders) >= 1.0


def test_snapshots_of_different_meshes_do_not_compare(tmp_path):
    first = generate_mesh(MeshSpec(dim=1, nx=8))
    second = generate_mesh(MeshSpec(dim=1, nx=8, x1=2.0))
    w = np.ones(8)
    write_snapshot(tmp_path / "a.csv", first, w, w)
    write_snapshot(tmp_path / "b.csv", second, w, w)
    write_snapshot(tmp_path / "c.csv", first, 2.0 * w, w)
    assert compare_snapshots(tmp_path / "a.csv", tmp_path / "c.csv") == pytest.approx(0.5)
    with pytest.raises(ValueError, match="different meshes"):
        compare_snapshots(tmp_path / "a.csv", tmp_path / "b.csv")
