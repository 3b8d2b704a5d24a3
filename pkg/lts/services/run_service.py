"""
Run orchestration

Builds mesh, initial state and decomposition from a RunConfig and drives
the iterations in one of three modes: the sequential reference
integrator, task generation on one rank, or task generation on several
ranks exchanging ghosts. Writes the requested snapshot, trace and tables.
"""
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from lts.errors import NumericalBlowUp, TransportError
from lts.schemas.run_config import RunConfig
from lts.schemas.summary import DagStats, IterationSummary, LevelShare
from lts.schemas.trace import ReadySample, TraceEvent, WorkerProfile
from lts.services.adaptive_service import (
    LevelMap,
    SolverState,
    compute_levels,
    cost_ratio,
    end_iteration,
    global_heun_integrate,
    initial_profile,
    level_statistics,
    reference_iteration,
)
from lts.services.ce_service import build_ces
from lts.services.exchange_service import GhostExchange, build_exchange_plan
from lts.services.mesh_service import Mesh, generate_mesh
from lts.services.numerics_service import make_flux_model
from lts.services.partition_service import Partition, build_partition, level_weights
from lts.services.runtime_service import Runtime
from lts.services.taskgen_service import TaskGenerator, host_levels
from lts.services.transport_service import SocketTransport, Transport, make_transports
from lts.utils.snapshot_io import write_records, write_snapshot
from lts.utils.trace_io import write_trace

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    config: RunConfig
    mesh: Mesh
    w: np.ndarray
    W: np.ndarray
    time: float
    initial_total: float
    summaries: List[IterationSummary] = field(default_factory=list)
    level_rows: List[LevelShare] = field(default_factory=list)
    dag_stats: List[DagStats] = field(default_factory=list)
    trace: List[TraceEvent] = field(default_factory=list)
    ready_samples: List[ReadySample] = field(default_factory=list)

    @property
    def total_extensive(self) -> float:
        return math.fsum(self.W)

    @property
    def conservation_defect(self) -> float:
        """|sum W(final) - sum W(initial)| relative to |sum W(initial)|"""
        scale = max(abs(self.initial_total), 1e-300)
        return abs(self.total_extensive - self.initial_total) / scale


def build_problem(config: RunConfig) -> Tuple[Mesh, SolverState]:
    mesh = generate_mesh(config.mesh_spec())
    model = make_flux_model(config.physics, config.velocity_vector)
    x0 = [config.x0, config.y0][: mesh.dim]
    length = [config.x1 - config.x0, config.y1 - config.y0][: mesh.dim]
    w0 = initial_profile(config.initial, mesh, x0, length)
    return mesh, SolverState.create(mesh, model, w0, cfl=config.cfl, dt_cap=config.dt_cap)


def decompose(config: RunConfig, state: SolverState, levelmap: Optional[LevelMap] = None) -> Partition:
    """Partition weighted by the current levels (2^(theta - tau) per cell)"""
    levelmap = levelmap or host_levels(_scratch_copy(state), config.theta_max)
    weights = level_weights(levelmap.tau_of_cell, levelmap.theta)
    return build_partition(state.mesh, config.ranks, config.ces, weights)


def _scratch_copy(state: SolverState) -> SolverState:
    return SolverState.create(state.mesh, state.model, state.w, cfl=state.cfl, dt_cap=state.dt_cap)


def _profile_totals(profiles: List[WorkerProfile]) -> Dict[str, float]:
    return {
        "executing": sum(p.executing for p in profiles),
        "sleeping": sum(p.sleeping for p in profiles),
        "overhead": sum(p.overhead for p in profiles),
    }


def _level_rows(iteration: int, levelmap: LevelMap, cells: Optional[np.ndarray] = None) -> List[LevelShare]:
    if cells is not None:
        levelmap = LevelMap(levelmap.tau_of_cell[cells], levelmap.theta, levelmap.dt_min)
    return [LevelShare(iteration=iteration, **row) for row in level_statistics(levelmap)]


class RunService:
    """Drives one run described by a RunConfig"""

    def __init__(self, config: RunConfig):
        self.config = config
        self._rank_traces: Dict[int, Tuple[List[TraceEvent], List[ReadySample]]] = {}

    def run(self) -> RunResult:
        config = self.config
        logger.info(
            f"[Run] mode={config.mode} dim={config.dim} physics={config.physics} "
            f"iterations={config.iterations} theta_max={config.theta_max}"
        )
        if config.mode == "reference":
            result = self._run_reference()
        elif config.mode == "tasks":
            result = self._run_tasks()
        else:
            result = self._run_dist()
        if result is not None:
            self.write_outputs(result)
        return result

    # --- reference -----------------------------------------------------------

    def _run_reference(self) -> RunResult:
        config = self.config
        mesh, state = build_problem(config)
        result = RunResult(config, mesh, state.w, state.W, 0.0, state.total_extensive())
        for it in range(config.iterations):
            started = time.perf_counter()
            state.iteration = it
            levelmap = compute_levels(state, config.theta_max)
            reference_iteration(state, levelmap)
            summary = self._summary(it, 0, started, levelmap, state.total_extensive())
            result.summaries.append(summary)
            result.level_rows.extend(summary.levels)
        result.w, result.W, result.time = state.w, state.W, state.time
        return result

    # --- tasks (one rank) ----------------------------------------------------

    def _run_tasks(self) -> RunResult:
        config = self.config
        mesh, state = build_problem(config)
        result = RunResult(config, mesh, state.w.copy(), state.W.copy(), 0.0, state.total_extensive())
        partition = decompose(config, state)
        ces = build_ces(mesh, partition)
        with Runtime(config.worker_lanes, scheduler=config.scheduler, priority_levels=config.priority_levels,
                     trace=bool(config.trace), probe_period=config.probe_period) as runtime:
            gen = self._generator(runtime, state, ces)
            symbolic_levels = host_levels(_scratch_copy(state), config.theta_max) if config.symbolic else None
            runtime.profile_query()
            for it in range(config.iterations):
                started = time.perf_counter()
                state.iteration = it
                if config.repartition_every and it > 0 and it % config.repartition_every == 0:
                    partition = decompose(config, state)
                    ces = build_ces(mesh, partition)
                    gen = self._generator(runtime, state, ces, iteration=it)
                    logger.info(f"[Run] repartitioned at iteration {it}")
                levelmap = symbolic_levels if config.symbolic else gen.compute_levels()
                stats = self._insert(runtime, gen, levelmap)
                runtime.wait_all()
                # host interlude: read the state directly while no task may start
                runtime.pause()
                total = state.total_extensive()
                runtime.resume()
                if not config.symbolic:
                    end_iteration(state)
                gen.finish_iteration()
                summary = self._summary(it, 0, started, levelmap, total, runtime.profile_query(), stats)
                result.summaries.append(summary)
                result.level_rows.extend(summary.levels)
                result.dag_stats.append(stats)
            result.trace = list(runtime.trace)
            result.ready_samples = list(runtime.ready_samples)
        result.w, result.W, result.time = state.w, state.W, state.time
        return result

    def _generator(self, runtime: Runtime, state: SolverState, ces, rank: int = 0,
                   exchange: Optional[GhostExchange] = None, iteration: int = 0) -> TaskGenerator:
        config = self.config
        gen = TaskGenerator(runtime, state, ces, rank=rank, pack=config.pack, symbolic=config.symbolic,
                            priority_levels=config.priority_levels, theta_max=config.theta_max,
                            exchange=exchange)
        gen.iteration = iteration
        return gen

    def _insert(self, runtime: Runtime, gen: TaskGenerator, levelmap: LevelMap) -> DagStats:
        """One iteration of tasks, released to the workers at once unless streaming"""
        if not self.config.hold_insertion:
            return gen.insert_iteration(levelmap)
        runtime.pause()
        try:
            return gen.insert_iteration(levelmap)
        finally:
            runtime.resume()

    # --- dist (several ranks) ------------------------------------------------

    def _run_dist(self) -> Optional[RunResult]:
        config = self.config
        if config.repartition_every:
            logger.warning("[Run] repartition-every is ignored in dist mode")
        if config.rank_id is not None:
            transport = SocketTransport(config.rank_id, config.peer_list, listen=config.listen)
            with transport:
                return self._rank_main(transport)
        transports = make_transports(config.transport, config.ranks)
        results: Dict[int, RunResult] = {}
        errors: Dict[int, BaseException] = {}

        def rank_thread(transport: Transport) -> None:
            try:
                with transport:
                    results[transport.rank] = self._rank_main(transport)
            except BaseException as exc:  # noqa: BLE001
                logger.error(f"[Run] rank {transport.rank} failed: {exc}")
                errors[transport.rank] = exc
                for other in transports:
                    if other is not transport:
                        other.peer_lost(transport.rank, str(exc))

        threads = [threading.Thread(target=rank_thread, args=(t,), name=f"lts-rank-{t.rank}", daemon=True)
                   for t in transports]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        if errors:
            causes = [r for r in sorted(errors) if not isinstance(errors[r], TransportError)]
            raise errors[causes[0] if causes else min(errors)]
        merged = results[0]
        merged.trace = [e for r in sorted(self._rank_traces) for e in self._rank_traces[r][0]]
        merged.ready_samples = [s for r in sorted(self._rank_traces) for s in self._rank_traces[r][1]]
        return merged

    def _rank_main(self, transport: Transport) -> Optional[RunResult]:
        """Everything one rank does; returns the gathered result on rank 0"""
        config = self.config
        rank = transport.rank
        mesh, state = build_problem(config)
        initial_total = state.total_extensive()
        partition = decompose(config, state)
        ces = build_ces(mesh, partition)
        plan = build_exchange_plan(ces, partition, rank)
        exchange = GhostExchange(plan, transport, state)
        owned = np.flatnonzero(partition.domain_of_cell == rank)
        summaries: List[IterationSummary] = []
        level_rows: List[LevelShare] = []
        dag_stats: List[DagStats] = []

        with Runtime(config.worker_lanes, scheduler=config.scheduler, priority_levels=config.priority_levels,
                     rank=rank, trace=bool(config.trace), probe_period=config.probe_period) as runtime:
            gen = self._generator(runtime, state, ces, rank=rank, exchange=exchange)
            runtime.profile_query()
            for it in range(config.iterations):
                started = time.perf_counter()
                state.iteration = it
                levelmap = gen.compute_levels()
                stats = self._insert(runtime, gen, levelmap)
                runtime.wait_all()
                runtime.pause()
                local_total = state.total_extensive(owned)
                runtime.resume()
                total = transport.allreduce(local_total, "sum")
                end_iteration(state)
                gen.finish_iteration()
                summary = self._summary(it, rank, started, levelmap, total, runtime.profile_query(), stats,
                                        cells=owned)
                summaries.append(summary)
                level_rows.extend(summary.levels)
                dag_stats.append(stats)
            trace, samples = list(runtime.trace), list(runtime.ready_samples)
        self._rank_traces[rank] = (trace, samples)

        gathered_w = transport.gather(np.concatenate([owned.astype(np.float64), state.w[owned]]))
        gathered_W = transport.gather(state.W[owned])
        events = transport.gather(np.array([len(trace)], dtype=np.float64))
        if rank != 0:
            if config.rank_id is not None and config.trace:
                write_trace(f"{config.trace}.rank{rank}", trace, samples)
            return None

        w = np.empty(mesh.n_cells)
        W = np.empty(mesh.n_cells)
        for packed, extensive in zip(gathered_w, gathered_W):
            half = packed.size // 2
            cells = packed[:half].astype(np.int64)
            w[cells] = packed[half:]
            W[cells] = extensive
        logger.info(f"[Run] gathered {mesh.n_cells} cells from {transport.n_ranks} rank(s), "
                    f"{int(sum(e[0] for e in events))} trace event(s)")
        result = RunResult(config, mesh, w, W, state.time, initial_total, summaries, level_rows, dag_stats,
                           trace, samples)
        return result

    # --- summaries and outputs -----------------------------------------------

    def _summary(self, iteration: int, rank: int, started: float, levelmap: LevelMap, total: float,
                 profiles: Optional[List[WorkerProfile]] = None, stats: Optional[DagStats] = None,
                 cells: Optional[np.ndarray] = None) -> IterationSummary:
        if not np.isfinite(total):
            raise NumericalBlowUp("non-finite conserved total", iteration=iteration)
        profile = _profile_totals(profiles or [])
        summary = IterationSummary(
            iteration=iteration,
            rank=rank,
            elapsed=time.perf_counter() - started,
            theta=levelmap.theta,
            dt_min=levelmap.dt_min,
            cost_ratio=cost_ratio(levelmap),
            total_extensive=total,
            elementary_tasks=stats.elementary_tasks if stats else None,
            inserted_packs=stats.inserted_packs if stats else None,
            levels=_level_rows(iteration, levelmap, cells),
            **profile,
        )
        shares = " ".join(f"{row.tau}:{row.cell_share:.2f}%/{row.cost_share:.2f}%" for row in summary.levels)
        logger.info(
            f"[Run] rank {rank} iteration {iteration}: theta={summary.theta} dt_min={summary.dt_min:.4e} "
            f"ratio={summary.cost_ratio:.3f} total={summary.total_extensive:.17g} levels[{shares}] "
            f"elapsed={summary.elapsed:.3f}s"
        )
        return summary

    def write_outputs(self, result: RunResult) -> None:
        config = self.config
        if config.snapshot:
            write_snapshot(config.snapshot, result.mesh, result.w, result.W)
            logger.info(f"[Run] snapshot written to {config.snapshot}")
        if config.trace:
            count = write_trace(config.trace, result.trace, result.ready_samples)
            logger.info(f"[Run] {count} trace record(s) written to {config.trace}")
        if config.summary:
            write_records(config.summary, result.summaries)
        if config.level_stats:
            write_records(config.level_stats, result.level_rows)
        if config.dag_stats:
            write_records(config.dag_stats, result.dag_stats)


def run_global_heun(config: RunConfig, n_steps: int) -> RunResult:
    """Global-step Heun on the same problem (equivalence oracle)"""
    mesh, state = build_problem(config)
    initial_total = state.total_extensive()
    global_heun_integrate(state, n_steps)
    return RunResult(config, mesh, state.w, state.W, state.time, initial_total)
