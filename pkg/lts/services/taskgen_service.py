"""
Task generation for the adaptive iteration

Every line of the iteration becomes one elementary task per CE component
(border cells, inner cells, face groups) that holds cells/faces of the
line's levels. Elementary tasks of the same CE and kind are packed into a
single runtime task; a pack is closed when its CE switches kind, and any
open pack that conflicts with the task being placed is flushed first, so
packed execution computes exactly what the elementary order computes.
"""
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lts.config import settings
from lts.errors import DependencyError
from lts.schemas.summary import DagStats
from lts.services.adaptive_service import (
    IterationSchedule,
    LevelMap,
    SolverOps,
    SolverState,
    StageSets,
    begin_iteration,
    classify_levels,
    smooth_levels,
)
from lts.services.ce_service import BORDER, INNER, ComputationElement
from lts.services.runtime_service import READ, READ_WRITE, WRITE, DataHandle, Runtime, Step

logger = logging.getLogger(__name__)

FACES = "faces"
COMM = "comm"
PREDICTOR_STAGE = 0

# SolverState arrays behind each handle field
CELL_FIELDS = {
    "state": ("w", "W", "w_star", "W_star", "tick_start", "dt_max", "level", "residual", "increment"),
    "u": ("u",),
    "grad": ("grad",),
}
FACE_FIELDS = {
    "recon": ("w_left", "w_right"),
    "phi1": ("phi_start",),
    "phi2": ("phi_end",),
    "J": ("integral",),
    "acc": ("accumulated",),
}


def corrector_stage(m: int) -> int:
    return m + 1


# ----------------------------------------------------------------------------
# Handles
# ----------------------------------------------------------------------------

class HandleTable:
    """
    Data handles of one rank.

    cells: (CE, component, field) with field in state | u | grad
    faces: (group, field) with field in recon | phi1 | phi2 | J | acc
    ghost: (foreign CE, field) for cells mirrored from another rank
    """

    def __init__(self, runtime: Runtime):
        self.runtime = runtime
        self._handles: Dict[Tuple, DataHandle] = {}
        self._keys: Dict[int, Tuple] = {}

    def _get(self, key: Tuple) -> DataHandle:
        handle = self._handles.get(key)
        if handle is None:
            handle = self.runtime.register(":".join(str(k) for k in key))
            self._handles[key] = handle
            self._keys[handle.id] = key
        return handle

    def key_of(self, handle: DataHandle) -> Tuple:
        return self._keys[handle.id]

    def cell(self, ce: int, component: str, fld: str) -> DataHandle:
        return self._get(("cell", ce, component, fld))

    def faces(self, group: Tuple, fld: str) -> DataHandle:
        return self._get(("faces",) + tuple(group) + (fld,))

    def ghost(self, foreign_ce: int, fld: str) -> DataHandle:
        return self._get(("ghost", foreign_ce, fld))

    def buffer(self, direction: str, local_ce: int, foreign_ce: int) -> DataHandle:
        return self._get(("buffer", direction, local_ce, foreign_ce))

    def __len__(self) -> int:
        return len(self._handles)


# ----------------------------------------------------------------------------
# Packing
# ----------------------------------------------------------------------------

@dataclass
class ElementaryTask:
    ce: int
    kind: str
    name: str
    steps: List[Step]
    reads: List[DataHandle]
    writes: List[DataHandle]
    tags: Dict[str, Any] = field(default_factory=dict)


@dataclass
class TaskPack:
    ce: int
    kind: str
    priority: int
    tasks: List[ElementaryTask] = field(default_factory=list)
    reads: Dict[int, DataHandle] = field(default_factory=dict)
    writes: Dict[int, DataHandle] = field(default_factory=dict)

    def add(self, task: ElementaryTask) -> None:
        self.tasks.append(task)
        for h in task.reads:
            self.reads[h.id] = h
        for h in task.writes:
            self.writes[h.id] = h

    def conflicts(self, task: ElementaryTask) -> bool:
        """RAW, WAR or WAW on any handle"""
        for h in task.reads:
            if h.id in self.writes:
                return True
        for h in task.writes:
            if h.id in self.writes or h.id in self.reads:
                return True
        return False

    def accesses(self) -> List[Tuple[DataHandle, str]]:
        out = []
        for hid, h in self.writes.items():
            out.append((h, READ_WRITE if hid in self.reads else WRITE))
        for hid, h in self.reads.items():
            if hid not in self.writes:
                out.append((h, READ))
        return out


def _accesses(task: ElementaryTask) -> List[Tuple[DataHandle, str]]:
    pack = TaskPack(task.ce, task.kind, 0)
    pack.add(task)
    return pack.accesses()


class Packer:
    """
    Groups consecutive elementary tasks of a CE into packs.

    With packing disabled every elementary task is inserted on its own.
    """

    def __init__(self, runtime: Runtime, enabled: bool = True):
        self.runtime = runtime
        self.enabled = enabled
        self._open: Dict[int, TaskPack] = {}
        self.elementary = 0
        self.inserted = 0
        self.large = 0
        self.comm = 0

    def pack_or_insert(self, task: ElementaryTask, priority: int) -> None:
        self.elementary += 1
        if not self.enabled:
            self._insert(task.steps, _accesses(task), priority, task.name, task.tags)
            return
        for ce, pack in list(self._open.items()):
            if ce != task.ce and pack.conflicts(task):
                self.flush(ce)
        own = self._open.get(task.ce)
        if own is not None and own.kind != task.kind:
            self.flush(task.ce)
            own = None
        if own is None:
            own = TaskPack(task.ce, task.kind, priority)
            self._open[task.ce] = own
        own.add(task)

    def insert_direct(self, steps: List[Step], accesses: List[Tuple[DataHandle, str]], priority: int,
                      name: str, tags: Dict[str, Any],
                      detached: Optional[Callable[[Callable[..., None]], None]] = None) -> None:
        """Communication tasks: never packed, inserted after flushing every open pack"""
        self.flush_all()
        self.comm += 1
        self._insert(steps, accesses, priority, name, tags, detached)

    def flush(self, ce: int) -> None:
        pack = self._open.pop(ce, None)
        if pack is None or not pack.tasks:
            return
        steps = [step for task in pack.tasks for step in task.steps]
        first = pack.tasks[0]
        tags = dict(first.tags)
        tags["kind"] = pack.kind
        tags["size"] = len(pack.tasks)
        if pack.kind.startswith("large"):
            self.large += 1
        name = first.name if len(pack.tasks) == 1 else f"pack[{pack.kind}]ce{pack.ce}x{len(pack.tasks)}"
        self._insert(steps, pack.accesses(), pack.priority, name, tags)

    def flush_all(self) -> None:
        for ce in sorted(self._open):
            self.flush(ce)

    def _insert(self, steps, accesses, priority, name, tags, detached=None) -> None:
        self.inserted += 1
        self.runtime.insert_task(steps, accesses, priority=priority, name=name, tags=tags, detached=detached)

    def reset_counters(self) -> None:
        self.elementary = self.inserted = self.large = self.comm = 0


# ----------------------------------------------------------------------------
# Priorities
# ----------------------------------------------------------------------------

def compute_priorities(ces: Sequence[ComputationElement], levels: np.ndarray, p_max: int) -> Dict[int, int]:
    """
    CEs holding level-0 or level-1 cells get p_max; the others decrease by
    one per CE-graph hop from the nearest such CE (floored at 0). Without
    any such CE every CE gets p_max.
    """
    if p_max < 0:
        raise ValueError("p_max must be >= 0")
    sources = [ce.id for ce in ces if np.any(levels[ce.cells] <= 1)]
    if not sources:
        return {ce.id: p_max for ce in ces}
    neighbours = {ce.id: ce.neighbour_ces for ce in ces}
    distance = {ce_id: 0 for ce_id in sources}
    queue = deque(sources)
    while queue:
        current = queue.popleft()
        for nb in neighbours.get(current, []):
            if nb not in distance:
                distance[nb] = distance[current] + 1
                queue.append(nb)
    return {ce.id: max(0, p_max - distance.get(ce.id, p_max)) for ce in ces}


# ----------------------------------------------------------------------------
# Generator
# ----------------------------------------------------------------------------

def _noop(part: int, n_parts: int) -> None:
    return None


def _split_step(fn: Callable, items: np.ndarray, *args) -> Step:
    def run(part: int, n_parts: int) -> None:
        chunk = items if n_parts == 1 else np.array_split(items, n_parts)[part]
        if chunk.size:
            fn(chunk, *args)
    return run


def _group_by(keys: np.ndarray, items: np.ndarray) -> Dict[int, np.ndarray]:
    """Split sorted items by key, keeping ascending order inside each group"""
    if items.size == 0:
        return {}
    k = keys[items]
    order = np.argsort(k, kind="stable")
    k_sorted = k[order]
    bounds = np.flatnonzero(np.diff(k_sorted)) + 1
    out = {}
    for chunk in np.split(order, bounds):
        out[int(k[chunk[0]])] = items[chunk]
    return out


class TaskGenerator:
    """
    Inserts the tasks of one adaptive iteration for the CEs of one rank.

    The elementary tasks walk the same IterationSchedule as the sequential
    reference integrator; results are therefore identical to it.
    """

    def __init__(self, runtime: Runtime, state: SolverState, ces: Sequence[ComputationElement],
                 rank: int = 0, pack: bool = True, symbolic: bool = False,
                 priority_levels: Optional[int] = None, theta_max: int = 3, exchange=None):
        self.runtime = runtime
        self.state = state
        self.mesh = state.mesh
        self.ces = list(ces)
        self.rank = rank
        self.symbolic = symbolic
        self.theta_max = theta_max
        self.exchange = exchange
        self.p_max = (priority_levels or settings.PRIORITY_LEVELS) - 1
        self.ops = SolverOps(state)
        self.handles = HandleTable(runtime)
        self.packer = Packer(runtime, enabled=pack)

        self.local = [ce for ce in self.ces if ce.rank == rank]
        self.local_ids = {ce.id for ce in self.local}
        self.by_id = {ce.id: ce for ce in self.ces}
        n = self.mesh.n_cells

        # component key per cell: 2*ce + (0 border, 1 inner); -1 when not local
        self.component_of_cell = np.full(n, -1, dtype=np.int64)
        for ce in self.local:
            self.component_of_cell[ce.border_cells] = 2 * ce.id
            self.component_of_cell[ce.inner_cells] = 2 * ce.id + 1
        self.local_mask = self.component_of_cell >= 0
        if exchange is not None:
            self.ops.owned = self.local_mask
        self.mpi_border_cells = np.sort(np.concatenate(
            [ce.mpi_border_cells for ce in self.local] or [np.zeros(0, dtype=np.int64)]
        )).astype(np.int64)

        self.groups: List[Tuple] = []
        self.group_emitter: List[int] = []
        self.group_of_face = np.full(self.mesh.n_faces, -1, dtype=np.int64)
        self.groups_of_ce: Dict[int, List[int]] = {ce.id: [] for ce in self.local}
        self._build_face_groups()
        self.group_ids = {group: gid for gid, group in enumerate(self.groups)}
        self._group_faces: Dict[int, np.ndarray] = {}
        self.priorities = {ce.id: self.p_max for ce in self.ces}
        self.iteration = 0

    # --- topology ------------------------------------------------------------

    def _build_face_groups(self) -> None:
        for ce in self.local:
            gid = len(self.groups)
            self.groups.append(("intra", ce.id))
            self.group_emitter.append(ce.id)
            self.group_of_face[ce.intra_faces] = gid
            self.groups_of_ce[ce.id].append(gid)
        seen = set()
        for ce in self.local:
            for other, faces in ce.inter_ce_faces.items():
                pair = (min(ce.id, other), max(ce.id, other))
                if pair in seen:
                    continue
                seen.add(pair)
                gid = len(self.groups)
                self.groups.append(("inter",) + pair)
                self.group_emitter.append(min(c for c in pair if c in self.local_ids))
                self.group_of_face[faces] = gid
                for c in pair:
                    if c in self.local_ids:
                        self.groups_of_ce[c].append(gid)

    def _group_cells_side(self, gid: int) -> List[Tuple[int, str]]:
        """Cell components whose u/grad a face group reads"""
        group = self.groups[gid]
        if group[0] == "intra":
            return [(group[1], BORDER), (group[1], INNER)]
        return [(group[1], BORDER), (group[2], BORDER)]

    def _cell_field(self, ce: int, component: str, fld: str) -> DataHandle:
        if ce in self.local_ids:
            return self.handles.cell(ce, component, fld)
        return self.handles.ghost(ce, fld)

    def _stencil_reads(self, ce: ComputationElement, component: str) -> List[DataHandle]:
        """u of every component a gradient/limit of this component looks at"""
        reads = [self.handles.cell(ce.id, BORDER, "u"), self.handles.cell(ce.id, INNER, "u")]
        if component == BORDER:
            reads += [self._cell_field(nb, BORDER, "u") for nb in ce.neighbour_ces]
        return reads

    def _face_reads(self, ce_id: int, component: str, fld: str) -> List[DataHandle]:
        gids = self.groups_of_ce[ce_id]
        if component == INNER:
            gids = gids[:1]
        return [self.handles.faces(self.groups[g], fld) for g in gids]

    # --- emission helpers ----------------------------------------------------

    def _emit(self, ce: int, kind: str, name: str, fn: Callable, items: np.ndarray, args: Tuple,
              reads: List[DataHandle], writes: List[DataHandle], tags: Dict[str, Any]) -> None:
        step = _noop if self.symbolic else _split_step(fn, items, *args)
        if self.ops.debug and not self.symbolic:
            step = self._guard_writes(step, reads, writes, name)
        task_tags = dict(tags)
        task_tags.update({"ce": ce, "op": name, "kind": kind})
        self.packer.pack_or_insert(
            ElementaryTask(ce=ce, kind=kind, name=f"{name}:ce{ce}", steps=[step],
                           reads=reads, writes=writes, tags=task_tags),
            self.priorities.get(ce, self.p_max),
        )

    def _region(self, handle: DataHandle) -> Tuple[Tuple[str, ...], np.ndarray]:
        """State arrays and indices a handle stands for"""
        key = self.handles.key_of(handle)
        if key[0] == "cell":
            return CELL_FIELDS[key[3]], self.by_id[key[1]].component_cells(key[2])
        if key[0] == "ghost":
            return CELL_FIELDS[key[2]], self.by_id[key[1]].border_cells
        if key[0] == "faces":
            gid = self.group_ids[key[1:-1]]
            if gid not in self._group_faces:
                self._group_faces[gid] = np.flatnonzero(self.group_of_face == gid)
            return FACE_FIELDS[key[-1]], self._group_faces[gid]
        return (), np.zeros(0, dtype=np.int64)

    def _guard_writes(self, step: Step, reads: List[DataHandle], writes: List[DataHandle], name: str) -> Step:
        """Raises DependencyError when the kernel changes data it only declared as read"""
        written = {h.id for h in writes}
        regions = [self._region(h) for h in reads if h.id not in written]
        state = self.state

        def run(part: int, n_parts: int) -> None:
            before = [[getattr(state, a)[idx].copy() for a in arrays] for arrays, idx in regions]
            step(part, n_parts)
            for (arrays, idx), saved in zip(regions, before):
                for a, old in zip(arrays, saved):
                    if not np.array_equal(getattr(state, a)[idx], old, equal_nan=True):
                        raise DependencyError(f"{name} wrote '{a}' outside its declared writes")
        return run

    def _cells_by_component(self, cells: np.ndarray) -> Dict[int, np.ndarray]:
        cells = cells[self.local_mask[cells]]
        return _group_by(self.component_of_cell, cells)

    def _faces_by_group(self, faces: np.ndarray) -> Dict[int, np.ndarray]:
        faces = faces[self.group_of_face[faces] >= 0]
        return _group_by(self.group_of_face, faces)

    def _foreach_cells(self, cells: np.ndarray, component: str, name: str, fn: Callable, args: Tuple,
                       access: Callable[[ComputationElement, str], Tuple[List, List]],
                       tags: Dict[str, Any], kind_of: Optional[Dict[int, str]] = None) -> None:
        split = self._cells_by_component(cells)
        offset = 0 if component == BORDER else 1
        for ce in self.local:
            items = split.get(2 * ce.id + offset)
            if items is None or items.size == 0:
                continue
            reads, writes = access(ce, component)
            kind = (kind_of or {}).get(ce.id, component)
            self._emit(ce.id, kind, name, fn, items, args, reads, writes, tags)

    def _foreach_faces(self, faces: np.ndarray, name: str, fn: Callable, args: Tuple,
                       access: Callable[[int], Tuple[List, List]], tags: Dict[str, Any],
                       kind_of: Optional[Dict[int, str]] = None) -> None:
        split = self._faces_by_group(faces)
        for ce in self.local:
            for gid in self.groups_of_ce[ce.id]:
                if self.group_emitter[gid] != ce.id:
                    continue
                items = split.get(gid)
                if items is None or items.size == 0:
                    continue
                reads, writes = access(gid)
                kind = (kind_of or {}).get(ce.id, FACES)
                self._emit(ce.id, kind, name, fn, items, args, reads, writes, tags)

    # --- access patterns -----------------------------------------------------

    def _state_rw(self, ce: ComputationElement, component: str):
        h = self.handles.cell(ce.id, component, "state")
        return [h], [h]

    def _interp_access(self, ce, component):
        return [self.handles.cell(ce.id, component, "state")], [self.handles.cell(ce.id, component, "u")]

    def _gradient_access(self, ce, component):
        return self._stencil_reads(ce, component), [self.handles.cell(ce.id, component, "grad")]

    def _limit_access(self, ce, component):
        g = self.handles.cell(ce.id, component, "grad")
        return self._stencil_reads(ce, component) + [g], [g]

    def _flux_sum_access(self, ce, component):
        h = self.handles.cell(ce.id, component, "state")
        return self._face_reads(ce.id, component, "phi1") + [h], [h]

    def _correction_access(self, ce, component):
        h = self.handles.cell(ce.id, component, "state")
        reads = self._face_reads(ce.id, component, "J") + self._face_reads(ce.id, component, "acc")
        return reads + [h], [h]

    def _recon_access(self, gid):
        reads = []
        for ce, component in self._group_cells_side(gid):
            reads += [self._cell_field(ce, component, "u"), self._cell_field(ce, component, "grad")]
        return reads, [self.handles.faces(self.groups[gid], "recon")]

    def _riemann_access(self, stage_field):
        def access(gid):
            group = self.groups[gid]
            return [self.handles.faces(group, "recon")], [self.handles.faces(group, stage_field)]
        return access

    def _integral_access(self, gid):
        group = self.groups[gid]
        return [self.handles.faces(group, "phi1"), self.handles.faces(group, "phi2")], \
            [self.handles.faces(group, "J")]

    def _accumulate_access(self, gid):
        group = self.groups[gid]
        acc = self.handles.faces(group, "acc")
        return [self.handles.faces(group, "J"), acc], [acc]

    # --- levels ---------------------------------------------------------------

    def insert_time_step(self) -> None:
        cells = np.flatnonzero(self.local_mask)
        tags = {"iteration": self.iteration, "subiteration": 0}
        for component in (BORDER, INNER):
            self._foreach_cells(cells, component, "time_step", self.ops.time_step, (), self._state_rw, tags)
        self.packer.flush_all()

    def insert_classification(self, dt_min: float) -> None:
        cells = np.flatnonzero(self.local_mask)
        tags = {"iteration": self.iteration, "subiteration": 0}
        for component in (BORDER, INNER):
            self._foreach_cells(cells, component, "classify", self.ops.classify,
                                (dt_min, self.theta_max), self._state_rw, tags)
        self.packer.flush_all()

    def compute_levels(self) -> LevelMap:
        """Time steps and raw levels as tasks, then the global reduction and smoothing on the host"""
        state = self.state
        local = np.flatnonzero(self.local_mask)
        self.insert_time_step()
        self.runtime.wait_all()
        local_min = float(state.dt_max[local].min())
        dt_min = self.exchange.allreduce_min(local_min) if self.exchange else local_min
        self.insert_classification(dt_min)
        self.runtime.wait_all()
        if self.exchange is not None:
            levels, theta = self.exchange.smooth_levels(state.level, self.local_mask, self.theta_max)
        else:
            levels, _ = smooth_levels(state.level, self.mesh)
            theta = int(levels.max()) if levels.size else 0
        return LevelMap(tau_of_cell=levels, theta=theta, dt_min=dt_min)

    # --- iteration ------------------------------------------------------------

    def _large_kinds(self, cell_sets: Sequence[np.ndarray], faces: np.ndarray, level: int) -> Dict[int, str]:
        """CEs whose whole stage stays on inner cells and intra-CE faces"""
        touched_border = set()
        for cells in cell_sets:
            for key in self._cells_by_component(cells):
                if key % 2 == 0:
                    touched_border.add(key // 2)
        for gid in self._faces_by_group(faces):
            if self.groups[gid][0] == "inter":
                touched_border.update(self.groups[gid][1:])
        return {ce.id: f"large:{level}" for ce in self.local if ce.id not in touched_border}

    def _dist_interp_cells(self, sets: StageSets, mask: int) -> np.ndarray:
        if self.exchange is None or self.mpi_border_cells.size == 0:
            return sets.interp_cells
        levels = self.state.level[self.mpi_border_cells]
        extra = self.mpi_border_cells[(np.left_shift(1, levels) & mask) != 0]
        return np.union1d(sets.interp_cells, extra)

    def _insert_gradients(self, sets: StageSets, tags: Dict[str, Any], kinds: Dict[int, str],
                          subiteration: int, stage: int, u_mask: int, grad_mask: int) -> None:
        interp_cells = self._dist_interp_cells(sets, u_mask)
        self._foreach_cells(interp_cells, BORDER, "interpolate", self.ops.interpolate, (sets.tick,),
                            self._interp_access, tags, kinds)
        if self.exchange is not None:
            self.exchange.insert_exchange(self, "u", subiteration, stage, u_mask)
        for name, fn, access in (("interpolate", self.ops.interpolate, self._interp_access),
                                 ("gradient", self.ops.gradient, self._gradient_access),
                                 ("limit", self.ops.limit, self._limit_access)):
            cells = interp_cells if name == "interpolate" else sets.face_cells
            args = (sets.tick,) if name == "interpolate" else ()
            self._foreach_cells(cells, INNER, name, fn, args, access, tags, kinds)
        for name, fn, access in (("gradient", self.ops.gradient, self._gradient_access),
                                 ("limit", self.ops.limit, self._limit_access)):
            self._foreach_cells(sets.face_cells, BORDER, name, fn, (), access, tags, kinds)
        if self.exchange is not None:
            self.exchange.insert_exchange(self, "grad", subiteration, stage, grad_mask)

    def _insert_predictor(self, schedule: IterationSchedule, tau: int, sets: StageSets, tags) -> None:
        active = schedule.active_cells(tau)
        kinds = self._large_kinds([sets.interp_cells, sets.face_cells], sets.faces, tau)
        u_mask = (1 << (tau + 3)) - 1
        grad_mask = (1 << (tau + 2)) - 1
        self._insert_gradients(sets, tags, kinds, tags["subiteration"], PREDICTOR_STAGE, u_mask, grad_mask)
        self._foreach_faces(sets.faces, "reconstruct", self.ops.reconstruct, (sets.tick,),
                            self._recon_access, tags, kinds)
        self._foreach_faces(sets.faces, "riemann", self.ops.riemann, (1,),
                            self._riemann_access("phi1"), tags, kinds)
        for component in (INNER, BORDER):
            for name, fn, access in (("flux_sum", self.ops.flux_sum, self._flux_sum_access),
                                     ("extensive_prediction", self.ops.extensive_prediction, self._state_rw),
                                     ("intensive_prediction", self.ops.intensive_prediction, self._state_rw)):
                self._foreach_cells(active, component, name, fn, (), access, tags, kinds)

    def _insert_corrector(self, m: int, sets: StageSets, stage_start_tick: int, tags) -> None:
        kinds = self._large_kinds([sets.interp_cells, sets.face_cells], sets.faces, m)
        u_mask = ((1 << (m + 3)) - 1) & ~((1 << max(m - 1, 0)) - 1)
        grad_mask = 0b11 << m
        self._insert_gradients(sets, tags, kinds, tags["subiteration"], corrector_stage(m), u_mask, grad_mask)
        self._foreach_faces(sets.faces, "reconstruct", self.ops.reconstruct, (sets.tick,),
                            self._recon_access, tags, kinds)
        self._foreach_faces(sets.faces, "riemann", self.ops.riemann, (2,),
                            self._riemann_access("phi2"), tags, kinds)
        self._foreach_faces(sets.faces, "flux_integral", self.ops.flux_integral, (),
                            self._integral_access, tags, kinds)
        self._foreach_faces(sets.interface_faces, "accumulate", self.ops.accumulate, (stage_start_tick,),
                            self._accumulate_access, tags, kinds)

    def _insert_correction(self, cells: np.ndarray, tags, final: bool = False) -> None:
        for component in (INNER, BORDER):
            self._foreach_cells(cells, component, "extensive_correction", self.ops.extensive_correction, (),
                                self._correction_access, tags)
            self._foreach_cells(cells, component, "intensive_correction", self.ops.intensive_correction, (),
                                self._state_rw, tags)
            if final:
                self._foreach_cells(cells, component, "intensive_update", self.ops.intensive_update, (),
                                    self._state_rw, tags)

    def insert_iteration(self, levelmap: LevelMap) -> DagStats:
        """
        Insert every task of one iteration (nothing is awaited).

        The host resets the per-iteration buffers first, so the runtime must
        be idle when this is called.
        """
        started = time.perf_counter()
        self.packer.reset_counters()
        if self.symbolic:
            schedule = IterationSchedule(self.mesh, levelmap.tau_of_cell, levelmap.theta)
        else:
            schedule = begin_iteration(self.state, levelmap)
        self.priorities = compute_priorities(self.ces, levelmap.tau_of_cell, self.p_max)

        for sub in schedule.subiterations():
            tags = {"iteration": self.iteration, "subiteration": sub.index}
            if sub.corrected_cells.size:
                self._insert_correction(sub.corrected_cells, tags)
            self._insert_predictor(schedule, sub.tau, sub.predictor, tags)
            for m, sets in sub.correctors:
                self._insert_corrector(m, sets, sub.tick, tags)

        tags = {"iteration": self.iteration, "subiteration": 2 ** levelmap.theta + 1}
        self._insert_correction(schedule.trailing_cells(), tags, final=True)
        self.packer.flush_all()

        stats = DagStats(
            iteration=self.iteration,
            n_ces=len(self.local),
            elementary_tasks=self.packer.elementary,
            inserted_packs=self.packer.inserted - self.packer.comm,
            large_packs=self.packer.large,
            comm_tasks=self.packer.comm,
            submission_time=time.perf_counter() - started,
        )
        logger.debug(
            f"[TaskGen] rank {self.rank} iteration {self.iteration}: {stats.elementary_tasks} elementary, "
            f"{stats.inserted_packs} inserted, {stats.large_packs} large, {stats.comm_tasks} comm"
        )
        return stats

    def finish_iteration(self) -> None:
        self.iteration += 1


def host_levels(state: SolverState, theta_max: int) -> LevelMap:
    """Level map computed directly on the host (symbolic runs, initial partition weights)"""
    ops = SolverOps(state)
    cells = np.arange(state.mesh.n_cells)
    ops.time_step(cells)
    return classify_levels(state.dt_max, float(state.dt_max.min()), theta_max, state.mesh)
