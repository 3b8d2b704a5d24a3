"""
Temporal adaptive time stepping

Cells are ranked in temporal levels: a level-tau cell advances with step
2^tau * dt_min. One iteration is 2^theta subiterations; subiteration s
starts a new step for levels 0..tau(s). Each face is advanced with the
step of the finer of its two cells. The coarse side of a level interface
receives the sum of the two fine-step flux integrals at its own
correction, which keeps the scheme conservative.

`SolverOps` holds the per-line kernels of one iteration on index arrays;
`IterationSchedule` says which cells/faces each line touches. The
sequential reference integrator and the task generator both walk the same
schedule, so they compute the same values.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lts.config import settings
from lts.errors import DependencyError, NumericalBlowUp
from lts.services import numerics_service as nx
from lts.services.mesh_service import BOUNDARY, Mesh

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# Level map
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelMap:
    tau_of_cell: np.ndarray
    theta: int
    dt_min: float

    @property
    def n_cells(self) -> int:
        return int(self.tau_of_cell.size)

    def cells_of_level(self, tau: int) -> np.ndarray:
        return np.flatnonzero(self.tau_of_cell == tau)

    def counts(self) -> np.ndarray:
        return np.bincount(self.tau_of_cell, minlength=self.theta + 1)

    def step_of_cell(self) -> np.ndarray:
        return np.ldexp(self.dt_min, self.tau_of_cell.astype(np.int64))


def raw_levels(dt_max: np.ndarray, dt_min: float, theta_max: int) -> np.ndarray:
    """floor(log2(dt_max / dt_min)) clamped to [0, theta_max], exact at powers of two"""
    if dt_min <= 0.0:
        raise ValueError(f"dt_min must be positive, got {dt_min}")
    if theta_max < 0:
        raise ValueError("theta_max must be >= 0")
    dt_max = np.asarray(dt_max, dtype=np.float64)
    tau = np.floor(np.log2(dt_max / dt_min)).astype(np.int64)
    tau = np.clip(tau, 0, max(theta_max, 0) + 1)
    tau = np.where(np.ldexp(dt_min, tau + 1) <= dt_max, tau + 1, tau)
    tau = np.where((tau > 0) & (np.ldexp(dt_min, tau) > dt_max), tau - 1, tau)
    return np.clip(tau, 0, theta_max)


def smooth_levels(levels: np.ndarray, mesh: Mesh, frozen: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
    """
    Lower levels until face neighbours differ by at most one.

    Levels are only ever lowered, so no cell exceeds its allowable step.
    `frozen` marks cells whose level is given (ghosts) and must not change.

    Returns:
        (smoothed levels, number of sweeps)
    """
    levels = np.array(levels, dtype=np.int64)
    sweeps = 0
    while True:
        nbr_min = levels[mesh.cell_nbrs].min(axis=1)
        lowered = np.minimum(levels, nbr_min + 1)
        if frozen is not None:
            lowered = np.where(frozen, levels, lowered)
        sweeps += 1
        if np.array_equal(lowered, levels):
            return levels, sweeps
        levels = lowered


def classify_levels(dt_max: np.ndarray, dt_min: float, theta_max: int,
                    mesh: Optional[Mesh] = None) -> LevelMap:
    """Raw classification, then neighbour smoothing when a mesh is given"""
    tau = raw_levels(dt_max, dt_min, theta_max)
    if mesh is not None:
        tau, _ = smooth_levels(tau, mesh)
    theta = int(tau.max()) if tau.size else 0
    return LevelMap(tau_of_cell=tau, theta=theta, dt_min=float(dt_min))


def subiteration_level(subiteration: int, theta: int) -> int:
    """Largest tmp in [0, theta] with (subiteration - 1) mod 2^tmp == 0"""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if not 1 <= subiteration <= 2 ** theta:
        raise ValueError(f"subiteration {subiteration} outside [1, {2 ** theta}]")
    tau = 0
    for tmp in range(1, theta + 1):
        if (subiteration - 1) % (2 ** tmp) == 0:
            tau = tmp
    return tau


def level_schedule(theta: int) -> List[int]:
    return [subiteration_level(s, theta) for s in range(1, 2 ** theta + 1)]


# ----------------------------------------------------------------------------
# Cost model
# ----------------------------------------------------------------------------

def level_cost(levelmap: LevelMap, tau: int) -> int:
    """C(tau) = 2^(theta - tau) * |Omega(tau)|"""
    count = int(np.count_nonzero(levelmap.tau_of_cell == tau))
    return (2 ** (levelmap.theta - tau)) * count


def cost_ratio(levelmap: LevelMap) -> float:
    """Cost of a global-step iteration over the cost of the adaptive iteration (>= 1)"""
    total = sum(level_cost(levelmap, tau) for tau in range(levelmap.theta + 1))
    if total == 0:
        return 1.0
    return (2 ** levelmap.theta) * levelmap.n_cells / total


def cost_shares(cell_shares: Sequence[float], theta: int) -> List[float]:
    """Cost share per level (percent) from cell shares per level"""
    if len(cell_shares) != theta + 1:
        raise ValueError(f"expected {theta + 1} shares, got {len(cell_shares)}")
    costs = [(2 ** (theta - tau)) * share for tau, share in enumerate(cell_shares)]
    total = sum(costs)
    return [100.0 * c / total for c in costs]


def cost_ratio_from_shares(cell_shares: Sequence[float], theta: int) -> float:
    costs = [(2 ** (theta - tau)) * share for tau, share in enumerate(cell_shares)]
    return (2 ** theta) * sum(cell_shares) / sum(costs)


def level_statistics(levelmap: LevelMap) -> List[Dict[str, float]]:
    """Cell and cost shares per level, as logged each iteration"""
    counts = levelmap.counts()
    costs = [level_cost(levelmap, tau) for tau in range(levelmap.theta + 1)]
    n = max(levelmap.n_cells, 1)
    total_cost = max(sum(costs), 1)
    return [
        {
            "tau": tau,
            "cells": int(counts[tau]),
            "cell_share": 100.0 * counts[tau] / n,
            "cost": int(costs[tau]),
            "cost_share": 100.0 * costs[tau] / total_cost,
        }
        for tau in range(levelmap.theta + 1)
    ]


# ----------------------------------------------------------------------------
# Initial conditions
# ----------------------------------------------------------------------------

def initial_profile(name: str, mesh: Mesh, x0: Sequence[float], length: Sequence[float]) -> np.ndarray:
    xi = [(mesh.centroid[:, d] - x0[d]) / length[d] for d in range(mesh.dim)]
    if name == "sine":
        return 1.0 + 0.5 * sum(np.sin(2.0 * math.pi * x) for x in xi)
    if name == "gaussian":
        r2 = sum((x - 0.5) ** 2 for x in xi)
        return 1.0 + np.exp(-r2 / 0.01)
    if name == "step":
        return np.where(xi[0] < 0.5, 2.0, 1.0)
    if name == "linear":
        return np.array(mesh.centroid[:, 0], dtype=np.float64)
    raise ValueError(f"unknown initial profile '{name}'")


# ----------------------------------------------------------------------------
# Solver state and per-line kernels
# ----------------------------------------------------------------------------

@dataclass
class SolverState:
    """Global arrays of one rank; kernels touch them through index arrays"""
    mesh: Mesh
    model: nx.FluxModel
    cfl: float
    dt_cap: float
    w: np.ndarray
    W: np.ndarray
    time: float = 0.0  # physical time at the start of the iteration
    w_star: np.ndarray = None
    W_star: np.ndarray = None
    tick_start: np.ndarray = None
    dt_max: np.ndarray = None
    level: np.ndarray = None
    u: np.ndarray = None
    grad: np.ndarray = None
    residual: np.ndarray = None
    increment: np.ndarray = None
    face_level: np.ndarray = None
    w_left: np.ndarray = None
    w_right: np.ndarray = None
    phi_start: np.ndarray = None
    phi_end: np.ndarray = None
    integral: np.ndarray = None
    accumulated: np.ndarray = None
    dt_min: float = 0.0
    theta: int = 0
    iteration: int = 0

    @classmethod
    def create(cls, mesh: Mesh, model: nx.FluxModel, w0: np.ndarray,
               cfl: float = None, dt_cap: float = None) -> "SolverState":
        w0 = np.array(w0, dtype=np.float64)
        state = cls(
            mesh=mesh, model=model,
            cfl=settings.CFL_TARGET if cfl is None else cfl,
            dt_cap=settings.DT_CAP if dt_cap is None else dt_cap,
            w=w0, W=w0 * mesh.volume,
        )
        n, nf = mesh.n_cells, mesh.n_faces
        state.w_star = w0.copy()
        state.W_star = state.W.copy()
        state.tick_start = np.zeros(n, dtype=np.int64)
        state.dt_max = np.zeros(n)
        state.level = np.zeros(n, dtype=np.int64)
        state.u = w0.copy()
        state.grad = np.zeros((n, mesh.dim))
        state.residual = np.zeros(n)
        state.increment = np.zeros(n)
        state.face_level = np.zeros(nf, dtype=np.int64)
        for name in ("w_left", "w_right", "phi_start", "phi_end", "integral", "accumulated"):
            setattr(state, name, np.full(nf, np.nan))
        return state

    def t_cell(self) -> np.ndarray:
        return self.time + self.tick_start * self.dt_min

    def total_extensive(self, cells: Optional[np.ndarray] = None) -> float:
        values = self.W if cells is None else self.W[cells]
        return float(math.fsum(values))


class SolverOps:
    """
    One kernel per line of the adaptive iteration.

    Each method reads/writes `state` only on the given index array (plus the
    neighbour reads documented on the method), so disjoint index arrays can
    run concurrently.
    """

    def __init__(self, state: SolverState, debug: Optional[bool] = None):
        self.state = state
        self.debug = settings.DEBUG_CHECKS if debug is None else debug
        # cells whose state this process advances (ghost cells keep a stale tick_start)
        self.owned: Optional[np.ndarray] = None

    # --- time step and levels -------------------------------------------------

    def time_step(self, cells: np.ndarray) -> None:
        s = self.state
        s.dt_max[cells] = nx.max_time_step(s.mesh, s.w, cells, s.model, s.cfl, s.dt_cap)

    def classify(self, cells: np.ndarray, dt_min: float, theta_max: int) -> None:
        s = self.state
        s.level[cells] = raw_levels(s.dt_max[cells], dt_min, theta_max)

    # --- cells ---------------------------------------------------------------

    def interpolate(self, cells: np.ndarray, tick: int) -> None:
        """Evaluation value at `tick` (intensive interpolation / repositioning)"""
        s = self.state
        theta = nx.interpolation_factor(tick, s.tick_start[cells], s.level[cells])
        s.u[cells] = nx.time_interpolate(s.w[cells], s.w_star[cells], theta)

    def gradient(self, cells: np.ndarray) -> None:
        """Reads u of the cells and their face neighbours"""
        s = self.state
        s.grad[cells] = nx.gradient(s.mesh, s.u, cells)

    def limit(self, cells: np.ndarray) -> None:
        """Reads u of the cells and their face neighbours"""
        s = self.state
        s.grad[cells] = nx.limit(s.mesh, s.u, s.grad, cells)

    def flux_sum(self, cells: np.ndarray) -> None:
        """Reads the stage-start flux of every face of the cells"""
        s = self.state
        s.residual[cells] = nx.flux_sum(s.mesh, s.phi_start, cells)

    def extensive_prediction(self, cells: np.ndarray) -> None:
        s = self.state
        h = np.ldexp(s.dt_min, s.level[cells])
        s.W_star[cells] = nx.extensive_prediction(s.W[cells], s.residual[cells], h)

    def intensive_prediction(self, cells: np.ndarray) -> None:
        s = self.state
        s.w_star[cells] = nx.intensive_update(s.W_star[cells], s.mesh.volume[cells])
        self._check_finite(s.w_star, cells, "predicted state")

    def extensive_correction(self, cells: np.ndarray) -> None:
        """Reads the flux integrals (or coarse-side accumulations) of every face of the cells"""
        s = self.state
        s.increment[cells] = self._correction_increment(cells)
        s.W[cells] = nx.extensive_correction(s.W[cells], s.increment[cells])

    def intensive_correction(self, cells: np.ndarray) -> None:
        s = self.state
        s.w[cells] = nx.intensive_update(s.W[cells], s.mesh.volume[cells])
        s.tick_start[cells] = s.tick_start[cells] + np.left_shift(1, s.level[cells])
        self._check_finite(s.w, cells, "corrected state")

    def intensive_update(self, cells: np.ndarray) -> None:
        """End-of-iteration intensive values, from the committed extensive ones"""
        s = self.state
        s.w[cells] = nx.intensive_update(s.W[cells], s.mesh.volume[cells])

    # --- faces ---------------------------------------------------------------

    def reconstruct(self, faces: np.ndarray, tick: int) -> None:
        """Reads u and limited gradients of both cells of each face"""
        s = self.state
        if self.debug:
            self._check_time_consistency(faces, tick)
        s.w_left[faces], s.w_right[faces] = nx.reconstruct(s.mesh, s.u, s.grad, faces)

    def riemann(self, faces: np.ndarray, stage: int) -> None:
        s = self.state
        phi = nx.face_fluxes(s.mesh, s.w_left[faces], s.w_right[faces], faces, s.model)
        if stage == 1:
            s.phi_start[faces] = phi
        else:
            s.phi_end[faces] = phi

    def flux_integral(self, faces: np.ndarray) -> None:
        s = self.state
        h = np.ldexp(s.dt_min, s.face_level[faces])
        s.integral[faces] = nx.flux_integral(s.phi_start[faces], s.phi_end[faces], h)

    def accumulate(self, faces: np.ndarray, tick: int) -> None:
        """Coarse-side integral of level-interface faces (stage-start tick of the fine step)"""
        s = self.state
        span = np.left_shift(1, s.face_level[faces] + 1)
        first = (tick % span) == 0
        s.accumulated[faces] = nx.accumulate_interface_flux(s.accumulated[faces], s.integral[faces], first)

    # --- helpers -------------------------------------------------------------

    def _correction_increment(self, cells: np.ndarray) -> np.ndarray:
        s = self.state
        mesh = s.mesh
        own = s.level[cells]
        total = np.zeros(cells.size)
        for k in range(mesh.max_faces):
            faces = mesh.cell_faces[cells, k]
            valid = faces >= 0
            safe = np.where(valid, faces, 0)
            finer = s.face_level[safe] < own
            values = np.where(finer, s.accumulated[safe], s.integral[safe])
            if np.any(valid & np.isnan(values)):
                missing = int(faces[valid & np.isnan(values)][0])
                raise DependencyError(f"face {missing} has no committed flux integral")
            total = total + np.where(valid, mesh.cell_signs[cells, k] * values, 0.0)
        return -total

    def _check_finite(self, values: np.ndarray, cells: np.ndarray, what: str) -> None:
        bad = ~np.isfinite(values[cells])
        if np.any(bad):
            raise NumericalBlowUp(
                f"non-finite {what} (CFL violation?)",
                iteration=self.state.iteration, cell=int(cells[bad][0]),
            )

    def _check_time_consistency(self, faces: np.ndarray, tick: int) -> None:
        s = self.state
        left = s.mesh.face_left[faces]
        right = np.where(s.mesh.face_right[faces] != BOUNDARY, s.mesh.face_right[faces], left)
        for cells in (left, right):
            if self.owned is not None:
                cells = cells[self.owned[cells]]
            elapsed = tick - s.tick_start[cells]
            if np.any((elapsed < 0) | (elapsed > np.left_shift(1, s.level[cells]))):
                raise DependencyError(f"face states evaluated at inconsistent times (tick {tick})")


# ----------------------------------------------------------------------------
# Schedule
# ----------------------------------------------------------------------------

@dataclass
class StageSets:
    tick: int
    interp_cells: np.ndarray  # cells needing an evaluation value
    face_cells: np.ndarray  # cells adjacent to the stage faces (gradient + limit)
    faces: np.ndarray
    interface_faces: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass
class Subiteration:
    index: int  # 1-based
    tau: int
    tick: int
    corrected_cells: np.ndarray  # cells whose step ends at `tick`
    predictor: StageSets
    correctors: List[Tuple[int, StageSets]]  # (level m, stage-end sets), m from tau down to 0


class IterationSchedule:
    """Cell and face sets of every line of one iteration, derived from the levels"""

    def __init__(self, mesh: Mesh, levels: np.ndarray, theta: int):
        self.mesh = mesh
        self.levels = np.asarray(levels, dtype=np.int64)
        self.theta = theta
        right = np.where(mesh.face_right != BOUNDARY, mesh.face_right, mesh.face_left)
        self.face_level = np.minimum(self.levels[mesh.face_left], self.levels[right])
        self.interface = self.levels[mesh.face_left] != self.levels[right]
        self._cache: Dict[Tuple[str, int], StageSets] = {}

    def _cells_of_faces(self, faces: np.ndarray) -> np.ndarray:
        right = self.mesh.face_right[faces]
        cells = np.concatenate([self.mesh.face_left[faces], right[right != BOUNDARY]])
        return np.unique(cells)

    def _with_neighbours(self, cells: np.ndarray) -> np.ndarray:
        if cells.size == 0:
            return cells
        return np.unique(np.concatenate([cells, self.mesh.cell_nbrs[cells].ravel()]))

    def _stage(self, faces: np.ndarray, tick: int) -> StageSets:
        face_cells = self._cells_of_faces(faces)
        return StageSets(
            tick=tick,
            interp_cells=self._with_neighbours(face_cells),
            face_cells=face_cells,
            faces=faces,
            interface_faces=faces[self.interface[faces]],
        )

    def predictor_sets(self, tau: int, tick: int) -> StageSets:
        key = ("pred", tau)
        if key not in self._cache:
            self._cache[key] = self._stage(np.flatnonzero(self.face_level <= tau), 0)
        base = self._cache[key]
        return StageSets(base.tick + tick, base.interp_cells, base.face_cells, base.faces, base.interface_faces)

    def corrector_sets(self, m: int, tick: int) -> StageSets:
        key = ("corr", m)
        if key not in self._cache:
            self._cache[key] = self._stage(np.flatnonzero(self.face_level == m), 0)
        base = self._cache[key]
        return StageSets(tick + (1 << m), base.interp_cells, base.face_cells, base.faces, base.interface_faces)

    def active_cells(self, tau: int) -> np.ndarray:
        return np.flatnonzero(self.levels <= tau)

    def subiterations(self) -> List[Subiteration]:
        out = []
        for s in range(1, 2 ** self.theta + 1):
            tau = subiteration_level(s, self.theta)
            tick = s - 1
            corrected = self.active_cells(tau) if s > 1 else np.zeros(0, dtype=np.int64)
            correctors = [(m, self.corrector_sets(m, tick)) for m in range(tau, -1, -1)]
            out.append(Subiteration(s, tau, tick, corrected, self.predictor_sets(tau, tick), correctors))
        return out

    def trailing_cells(self) -> np.ndarray:
        """All cells: every level ends its last step at the end of the iteration"""
        return np.arange(self.levels.size)


# ----------------------------------------------------------------------------
# Iteration drivers
# ----------------------------------------------------------------------------

def begin_iteration(state: SolverState, levelmap: LevelMap) -> IterationSchedule:
    """Install the levels of the iteration and reset the per-iteration buffers"""
    state.level[:] = levelmap.tau_of_cell
    state.dt_min = levelmap.dt_min
    state.theta = levelmap.theta
    state.tick_start[:] = 0
    schedule = IterationSchedule(state.mesh, levelmap.tau_of_cell, levelmap.theta)
    state.face_level[:] = schedule.face_level
    for name in ("w_left", "w_right", "phi_start", "phi_end", "integral", "accumulated"):
        getattr(state, name)[:] = np.nan
    return schedule


def end_iteration(state: SolverState) -> None:
    state.time = state.time + (2 ** state.theta) * state.dt_min
    state.tick_start[:] = 0
    state.iteration += 1


def run_predictor(ops: SolverOps, sets: StageSets, active: np.ndarray) -> None:
    ops.interpolate(sets.interp_cells, sets.tick)
    ops.gradient(sets.face_cells)
    ops.limit(sets.face_cells)
    ops.reconstruct(sets.faces, sets.tick)
    ops.riemann(sets.faces, stage=1)
    ops.flux_sum(active)
    ops.extensive_prediction(active)
    ops.intensive_prediction(active)


def run_corrector(ops: SolverOps, sets: StageSets, stage_start_tick: int) -> None:
    ops.interpolate(sets.interp_cells, sets.tick)
    ops.gradient(sets.face_cells)
    ops.limit(sets.face_cells)
    ops.reconstruct(sets.faces, sets.tick)
    ops.riemann(sets.faces, stage=2)
    ops.flux_integral(sets.faces)
    if sets.interface_faces.size:
        ops.accumulate(sets.interface_faces, stage_start_tick)


def compute_levels(state: SolverState, theta_max: int) -> LevelMap:
    ops = SolverOps(state)
    cells = np.arange(state.mesh.n_cells)
    ops.time_step(cells)
    dt_min = float(state.dt_max.min())
    return classify_levels(state.dt_max, dt_min, theta_max, state.mesh)


def reference_iteration(state: SolverState, levelmap: LevelMap, ops: Optional[SolverOps] = None) -> None:
    """One adaptive iteration, single-threaded, fixed loop order"""
    ops = ops or SolverOps(state)
    schedule = begin_iteration(state, levelmap)
    for sub in schedule.subiterations():
        if sub.corrected_cells.size:
            ops.extensive_correction(sub.corrected_cells)
            ops.intensive_correction(sub.corrected_cells)
        run_predictor(ops, sub.predictor, schedule.active_cells(sub.tau))
        for _m, sets in sub.correctors:
            run_corrector(ops, sets, sub.tick)
    trailing = schedule.trailing_cells()
    ops.extensive_correction(trailing)
    ops.intensive_correction(trailing)
    ops.intensive_update(trailing)
    end_iteration(state)


def reference_integrate(state: SolverState, theta_max: int, n_iterations: int,
                        on_iteration: Optional[Callable[[int, LevelMap, float], None]] = None) -> List[LevelMap]:
    """
    Run `n_iterations` adaptive iterations on `state` (in place).

    Returns:
        the LevelMap used by each iteration
    """
    history: List[LevelMap] = []
    for it in range(n_iterations):
        started = time.perf_counter()
        state.iteration = it
        levelmap = compute_levels(state, theta_max)
        reference_iteration(state, levelmap)
        history.append(levelmap)
        elapsed = time.perf_counter() - started
        logger.debug(
            f"[Adaptive] iteration {it}: theta={levelmap.theta} dt_min={levelmap.dt_min:.3e} "
            f"ratio={cost_ratio(levelmap):.3f} elapsed={elapsed:.3f}s"
        )
        if on_iteration is not None:
            on_iteration(it, levelmap, elapsed)
    return history


def global_heun_integrate(state: SolverState, n_steps: int) -> List[float]:
    """
    Plain global-step Heun integration (every cell with the smallest step).

    Returns:
        the step used at each iteration
    """
    mesh = state.mesh
    cells = np.arange(mesh.n_cells)
    faces = np.arange(mesh.n_faces)
    steps = []
    for _ in range(n_steps):
        dt = float(nx.max_time_step(mesh, state.w, cells, state.model, state.cfl, state.dt_cap).min())
        u = state.w.copy()
        grad = nx.limit(mesh, u, nx.gradient(mesh, u, cells), cells)
        wl, wr = nx.reconstruct(mesh, u, grad, faces)
        phi_start = nx.face_fluxes(mesh, wl, wr, faces, state.model)
        W_star, w_star = nx.predict(state.W, nx.flux_sum(mesh, phi_start, cells), dt, mesh.volume)
        u = nx.time_interpolate(state.w, w_star, np.ones(mesh.n_cells))
        grad = nx.limit(mesh, u, nx.gradient(mesh, u, cells), cells)
        wl, wr = nx.reconstruct(mesh, u, grad, faces)
        phi_end = nx.face_fluxes(mesh, wl, wr, faces, state.model)
        increment = nx.flux_sum(mesh, nx.flux_integral(phi_start, phi_end, dt), cells)
        state.W, state.w = nx.correct(state.W, increment, mesh.volume)
        state.time = state.time + dt
        steps.append(dt)
    return steps
