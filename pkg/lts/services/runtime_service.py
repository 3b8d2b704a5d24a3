"""
Sequential-task-flow runtime

Tasks are inserted in program order with declared accesses ('R', 'W', 'RW')
on data handles. A task waits for the last writer of everything it touches,
and a writer also waits for the readers since that write, so any parallel
execution computes what the sequential order computes. Ready tasks go to a
scheduler and are run by worker threads; a worker may own several lanes and
split a task's index arrays between them.
"""
import logging
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import psutil

from lts.config import settings
from lts.errors import DependencyError, RuntimeShutdown
from lts.schemas.trace import ReadySample, TraceEvent, WorkerProfile

logger = logging.getLogger(__name__)

READ = "R"
WRITE = "W"
READ_WRITE = "RW"
ACCESS_MODES = (READ, WRITE, READ_WRITE)

# A step is called as step(part, n_parts) and must only touch its share of the work.
Step = Callable[[int, int], None]


class DataHandle:
    """Opaque token naming a piece of data; carries the dependency bookkeeping"""

    __slots__ = ("id", "name", "last_writer", "readers")

    def __init__(self, handle_id: int, name: str):
        self.id = handle_id
        self.name = name
        self.last_writer: Optional["Task"] = None
        self.readers: List["Task"] = []

    def __repr__(self) -> str:
        return f"DataHandle({self.id}, {self.name!r})"


@dataclass(eq=False)
class Task:
    id: int
    name: str
    steps: List[Step]
    accesses: List[Tuple[DataHandle, str]]
    priority: int = 0
    tags: Dict[str, Any] = field(default_factory=dict)
    detached: Optional[Callable[[Callable[..., None]], None]] = None
    remaining: int = 0
    successors: List["Task"] = field(default_factory=list)
    done: bool = False

    @property
    def kind(self) -> Optional[str]:
        return self.tags.get("kind")


# ----------------------------------------------------------------------------
# Schedulers (not thread-safe; the runtime calls them under its lock)
# ----------------------------------------------------------------------------

class Scheduler(ABC):
    name = "abstract"

    @abstractmethod
    def push(self, task: Task) -> None:
        ...

    @abstractmethod
    def pop(self) -> Optional[Task]:
        ...

    @abstractmethod
    def __len__(self) -> int:
        ...


class FifoScheduler(Scheduler):
    """Ready tasks in the order they became ready; priorities ignored"""

    name = "fifo"

    def __init__(self):
        self._queue: Deque[Task] = deque()

    def push(self, task: Task) -> None:
        self._queue.append(task)

    def pop(self) -> Optional[Task]:
        return self._queue.popleft() if self._queue else None

    def __len__(self) -> int:
        return len(self._queue)


class PriorityScheduler(Scheduler):
    """One FIFO per priority level; pops from the highest non-empty level"""

    name = "prio"

    def __init__(self, levels: int):
        if levels < 1:
            raise ValueError("priority scheduler needs at least one level")
        self.levels = levels
        self._queues: List[Deque[Task]] = [deque() for _ in range(levels)]
        self._size = 0

    def push(self, task: Task) -> None:
        level = min(max(task.priority, 0), self.levels - 1)
        self._queues[level].append(task)
        self._size += 1

    def pop(self) -> Optional[Task]:
        for queue in reversed(self._queues):
            if queue:
                self._size -= 1
                return queue.popleft()
        return None

    def __len__(self) -> int:
        return self._size


def make_scheduler(name: str, priority_levels: int = None) -> Scheduler:
    if name == "fifo":
        return FifoScheduler()
    if name == "prio":
        return PriorityScheduler(priority_levels or settings.PRIORITY_LEVELS)
    raise ValueError(f"unknown scheduler '{name}'")


# ----------------------------------------------------------------------------
# Workers
# ----------------------------------------------------------------------------

EXECUTING = "executing"
SLEEPING = "sleeping"
OVERHEAD = "overhead"


@dataclass
class _Counters:
    executing: float = 0.0
    sleeping: float = 0.0
    overhead: float = 0.0
    tasks: int = 0

    def add(self, state: str, seconds: float) -> None:
        setattr(self, state, getattr(self, state) + seconds)


class WorkerContext:
    """
    One scheduling slot. With lanes > 1 every step of a task is run as
    `lanes` parts (part 0 on the worker thread) and joined before the next.

    A worker is always in exactly one state; `since` is when the time not
    yet booked into the counters started, `span_start` when the current
    trace interval started.
    """

    def __init__(self, worker_id: int, lanes: int, started: float = 0.0):
        if lanes < 1:
            raise ValueError("a worker needs at least one lane")
        self.id = worker_id
        self.lanes = lanes
        self.counters = _Counters()
        self.state = OVERHEAD
        self.since = started
        self.span_start = started
        self.span_task: Optional[Task] = None
        self._pool = ThreadPoolExecutor(max_workers=lanes - 1, thread_name_prefix=f"w{worker_id}-lane") \
            if lanes > 1 else None
        self.thread: Optional[threading.Thread] = None

    def execute(self, task: Task) -> None:
        for step in task.steps:
            if self._pool is None:
                step(0, 1)
                continue
            futures = [self._pool.submit(step, part, self.lanes) for part in range(1, self.lanes)]
            try:
                step(0, self.lanes)
            finally:
                errors = [f.exception() for f in futures]
            for error in errors:
                if error is not None:
                    raise error

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)


def configure_workers(spec: Sequence[int]) -> List[int]:
    """Validate lanes per worker against the cores of the machine"""
    lanes = [int(k) for k in spec]
    if not lanes or any(k < 1 for k in lanes):
        raise ValueError("every worker needs at least one lane")
    available = psutil.cpu_count(logical=True) or 1
    if sum(lanes) > available:
        logger.warning(f"[Runtime] {sum(lanes)} lane(s) requested on {available} CPU(s), threads will share cores")
    return lanes


# ----------------------------------------------------------------------------
# Runtime
# ----------------------------------------------------------------------------

class Runtime:
    """
    Thread-pool task runtime with dependency inference.

    Usage:
        with Runtime([1, 1], scheduler="prio") as rt:
            h = rt.register("x")
            rt.insert_task([step], [(h, "W")])
            rt.wait_all()
    """

    def __init__(self, worker_lanes: Sequence[int] = (1,), scheduler: str = "prio",
                 priority_levels: Optional[int] = None, rank: int = 0,
                 trace: bool = False, probe_period: Optional[float] = None):
        self.rank = rank
        self.scheduler = make_scheduler(scheduler, priority_levels)
        self._epoch = time.perf_counter()
        self._interval_start = self._epoch
        self.workers = [WorkerContext(i, k, self._epoch) for i, k in enumerate(configure_workers(worker_lanes))]
        self.trace_enabled = trace
        self.trace: List[TraceEvent] = []
        self.ready_samples: List[ReadySample] = []

        self._lock = threading.Lock()
        self._work = threading.Condition(self._lock)
        self._idle = threading.Condition(self._lock)
        self._running = threading.Event()
        self._running.set()
        self._stopping = False
        self._error: Optional[BaseException] = None
        self._next_task = 0
        self._next_handle = 0
        self._handles: Dict[int, DataHandle] = {}
        self.inserted = 0
        self.completed = 0

        for worker in self.workers:
            worker.thread = threading.Thread(target=self._worker_loop, args=(worker,),
                                             name=f"lts-worker-{worker.id}", daemon=True)
            worker.thread.start()

        self._probe: Optional[threading.Thread] = None
        if trace:
            period = probe_period if probe_period is not None else settings.PROBE_PERIOD
            self._probe = threading.Thread(target=self._probe_loop, args=(period,), name="lts-probe", daemon=True)
            self._probe.start()
        logger.debug(
            f"[Runtime] rank {rank}: {len(self.workers)} worker(s) "
            f"{[w.lanes for w in self.workers]} lanes, scheduler={self.scheduler.name}"
        )

    # --- context manager -----------------------------------------------------

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.shutdown()

    # --- data ----------------------------------------------------------------

    def register(self, name: str) -> DataHandle:
        with self._lock:
            handle = DataHandle(self._next_handle, name)
            self._handles[handle.id] = handle
            self._next_handle += 1
        return handle

    # --- insertion -----------------------------------------------------------

    def insert_task(self, steps: Iterable[Step], accesses: Sequence[Tuple[DataHandle, str]],
                    priority: int = 0, name: str = "", tags: Optional[Dict[str, Any]] = None,
                    detached: Optional[Callable[[Callable[..., None]], None]] = None) -> Task:
        """
        Insert a task; dependencies on earlier tasks are inferred from `accesses`.

        A detached task runs `detached(done)` on a worker and completes only
        when `done()` is called, from any thread. `done(error)` completes it
        as failed and the error is raised by the next wait_all().

        Raises:
            RuntimeShutdown: the runtime is shutting down
            DependencyError: a handle was not registered with this runtime
            ValueError: unknown access mode
        """
        merged: Dict[int, Tuple[DataHandle, bool, bool]] = {}
        for handle, mode in accesses:
            if mode not in ACCESS_MODES:
                raise ValueError(f"unknown access mode '{mode}'")
            if self._handles.get(handle.id) is not handle:
                raise DependencyError(f"{handle!r} is not registered with this runtime")
            _, reads, writes = merged.get(handle.id, (handle, False, False))
            merged[handle.id] = (handle, reads or mode != WRITE, writes or mode != READ)

        with self._lock:
            if self._stopping:
                raise RuntimeShutdown("runtime is shutting down")
            task = Task(
                id=self._next_task, name=name, steps=list(steps),
                accesses=list(accesses), priority=priority, tags=dict(tags or {}),
                detached=detached,
            )
            self._next_task += 1
            predecessors: Dict[int, Task] = {}
            for handle, reads, writes in merged.values():
                writer = handle.last_writer
                if writer is not None and not writer.done:
                    predecessors[writer.id] = writer
                if writes:
                    for reader in handle.readers:
                        if not reader.done and reader is not task:
                            predecessors[reader.id] = reader
                    handle.last_writer = task
                    handle.readers = []
                elif reads:
                    handle.readers = [r for r in handle.readers if not r.done]
                    handle.readers.append(task)
            predecessors.pop(task.id, None)
            task.remaining = len(predecessors)
            for pred in predecessors.values():
                pred.successors.append(task)
            self.inserted += 1
            if task.remaining == 0:
                self._push_ready(task)
        return task

    def _push_ready(self, task: Task) -> None:
        self.scheduler.push(task)
        self._work.notify()

    # --- control -------------------------------------------------------------

    def pause(self) -> None:
        """Inserted tasks are not started until resume(); running tasks finish"""
        self._running.clear()

    def resume(self) -> None:
        self._running.set()
        with self._lock:
            self._work.notify_all()

    @property
    def paused(self) -> bool:
        return not self._running.is_set()

    def wait_all(self) -> None:
        """
        Block until every inserted task has completed.

        Raises:
            RuntimeError: called while paused with pending tasks
            Exception: the first exception raised by a kernel
        """
        with self._lock:
            if self.paused and self.completed < self.inserted:
                raise RuntimeError("wait_all() while paused would never return")
            while self.completed < self.inserted:
                self._idle.wait()
            error, self._error = self._error, None
        if error is not None:
            raise error

    def shutdown(self) -> None:
        with self._lock:
            if self._stopping:
                return
        self.resume()
        try:
            self.wait_all()
        finally:
            with self._lock:
                self._stopping = True
                self._work.notify_all()
            for worker in self.workers:
                if worker.thread is not None:
                    worker.thread.join()
                worker.close()
            if self._probe is not None:
                self._probe.join()

    # --- profiling -----------------------------------------------------------

    def profile_query(self, reset: bool = True) -> List[WorkerProfile]:
        """
        Per-worker executing/sleeping/overhead seconds since the last reset.

        The span each worker is currently in is split at the query time, so
        the three states add up to the interval.
        """
        with self._lock:
            now = time.perf_counter()
            interval = now - self._interval_start
            profiles = []
            for worker in self.workers:
                c = worker.counters
                c.add(worker.state, now - worker.since)
                worker.since = now
                profiles.append(WorkerProfile(
                    worker=worker.id, lanes=worker.lanes, interval=interval,
                    executing=c.executing, sleeping=c.sleeping, overhead=c.overhead, tasks=c.tasks,
                ))
                if reset:
                    worker.counters = _Counters()
            if reset:
                self._interval_start = now
        return profiles

    def clock(self) -> float:
        return time.perf_counter() - self._epoch

    # --- internals -----------------------------------------------------------

    def _record(self, worker: WorkerContext, state: str, start: float, end: float,
                task: Optional[Task] = None) -> None:
        if not self.trace_enabled or end <= start:
            return
        tags = task.tags if task is not None else {}
        self.trace.append(TraceEvent(
            rank=self.rank, worker=worker.id, state=state,
            t_start=start - self._epoch, t_end=end - self._epoch,
            kind=tags.get("kind"), ce=tags.get("ce"), subiteration=tags.get("subiteration"),
        ))

    def _switch(self, worker: WorkerContext, state: str, task: Optional[Task] = None) -> None:
        """Close the worker's current span and open one in `state` (lock held)"""
        now = time.perf_counter()
        worker.counters.add(worker.state, now - worker.since)
        self._record(worker, worker.state, worker.span_start, now, worker.span_task)
        worker.state, worker.since, worker.span_start, worker.span_task = state, now, now, task

    def _next_ready(self, worker: WorkerContext) -> Optional[Task]:
        with self._lock:
            while True:
                if self._stopping:
                    return None
                if self._running.is_set():
                    task = self.scheduler.pop()
                    if task is not None:
                        self._switch(worker, EXECUTING, task)
                        return task
                if worker.state != SLEEPING:
                    self._switch(worker, SLEEPING)
                self._work.wait(timeout=0.05)

    def _worker_loop(self, worker: WorkerContext) -> None:
        while True:
            task = self._next_ready(worker)
            if task is None:
                return
            error = None
            try:
                if task.detached is not None:
                    task.detached(lambda error=None, t=task: self._complete(t, error))
                else:
                    worker.execute(task)
            except BaseException as exc:  # noqa: BLE001
                error = exc
            with self._lock:
                worker.counters.tasks += 1
                self._switch(worker, OVERHEAD)
            # a detached task completes through its callback unless it failed to start
            if task.detached is None or (error is not None and not task.done):
                self._complete(task, error)

    def _complete(self, task: Task, error: Optional[BaseException] = None) -> None:
        with self._lock:
            if task.done:
                raise DependencyError(f"task {task.id} ({task.name}) completed twice")
            if error is not None:
                if self._error is None:
                    logger.error(f"[Runtime] task {task.id} ({task.name}) failed: {error}")
                    self._error = error
            task.done = True
            self.completed += 1
            for succ in task.successors:
                succ.remaining -= 1
                if succ.remaining == 0:
                    self._push_ready(succ)
            task.successors = []
            if self.completed == self.inserted:
                self._idle.notify_all()

    def _probe_loop(self, period: float) -> None:
        while True:
            with self._lock:
                if self._stopping:
                    return
                ready = len(self.scheduler)
            self.ready_samples.append(ReadySample(rank=self.rank, t=self.clock(), ready=ready))
            time.sleep(period)
