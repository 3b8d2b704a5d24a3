import threading
import time

import pytest

from lts.errors import DependencyError, RuntimeShutdown
from lts.services.runtime_service import (
    READ, READ_WRITE, WRITE, DataHandle, FifoScheduler, PriorityScheduler, Runtime, Task,
    configure_workers, make_scheduler,
)


def _task(task_id, priority=0):
    return Task(id=task_id, name=f"t{task_id}", steps=[], accesses=[], priority=priority)


def _logging_step(log, label, delay=0.0):
    lock = threading.Lock()

    def step(part, n_parts):
        if delay:
            time.sleep(delay)
        with lock:
            log.append(label)
    return step


def test_fifo_scheduler_keeps_ready_order():
    scheduler = FifoScheduler()
    for i in range(3):
        scheduler.push(_task(i, priority=i))
    assert [scheduler.pop().id for _ in range(3)] == [0, 1, 2]
    assert scheduler.pop() is None


def test_priority_scheduler_pops_highest_first():
    scheduler = PriorityScheduler(4)
    for i, priority in enumerate([0, 3, 1, 3, 9]):
        scheduler.push(_task(i, priority))
    assert len(scheduler) == 5
    # priority 9 is clamped into the top queue behind the earlier ones
    assert [scheduler.pop().id for _ in range(5)] == [1, 3, 4, 2, 0]
    assert len(scheduler) == 0


def test_bad_configuration():
    with pytest.raises(ValueError):
        make_scheduler("lifo")
    with pytest.raises(ValueError):
        PriorityScheduler(0)
    with pytest.raises(ValueError):
        configure_workers([])
    assert configure_workers(["2", 1]) == [2, 1]


def test_read_after_write_waits_for_writer():
    log = []
    with Runtime([1, 1, 1], scheduler="fifo") as rt:
        x = rt.register("x")
        rt.insert_task([_logging_step(log, "write", delay=0.05)], [(x, WRITE)])
        for i in range(3):
            rt.insert_task([_logging_step(log, f"read{i}")], [(x, READ)])
        rt.wait_all()
    assert log[0] == "write"
    assert sorted(log[1:]) == ["read0", "read1", "read2"]


def test_write_after_read_waits_for_readers():
    log = []
    with Runtime([1, 1, 1], scheduler="fifo") as rt:
        x = rt.register("x")
        rt.insert_task([_logging_step(log, "read0", delay=0.05)], [(x, READ)])
        rt.insert_task([_logging_step(log, "read1", delay=0.05)], [(x, READ)])
        rt.insert_task([_logging_step(log, "update")], [(x, READ_WRITE)])
        rt.insert_task([_logging_step(log, "read2")], [(x, READ)])
        rt.wait_all()
    assert sorted(log[:2]) == ["read0", "read1"]
    assert log[2:] == ["update", "read2"]


def test_independent_tasks_run_concurrently():
    barrier = threading.Barrier(2, timeout=5.0)
    with Runtime([1, 1]) as rt:
        a, b = rt.register("a"), rt.register("b")
        rt.insert_task([lambda p, n: barrier.wait()], [(a, WRITE)])
        rt.insert_task([lambda p, n: barrier.wait()], [(b, WRITE)])
        rt.wait_all()


def test_lanes_split_every_step():
    seen = []
    lock = threading.Lock()

    def step(part, n_parts):
        with lock:
            seen.append((part, n_parts))

    with Runtime([3]) as rt:
        x = rt.register("x")
        rt.insert_task([step, step], [(x, WRITE)])
        rt.wait_all()
    assert sorted(seen) == [(0, 3), (0, 3), (1, 3), (1, 3), (2, 3), (2, 3)]


def test_detached_task_completes_on_callback():
    log = []
    with Runtime([1, 1]) as rt:
        buffer = rt.register("buffer")

        def receive(done):
            def arrive():
                log.append("arrived")
                done()
            threading.Timer(0.05, arrive).start()

        rt.insert_task([], [(buffer, WRITE)], detached=receive, name="recv")
        rt.insert_task([_logging_step(log, "unpack")], [(buffer, READ)])
        rt.wait_all()
    assert log == ["arrived", "unpack"]


def test_pause_holds_tasks_until_resume():
    log = []
    rt = Runtime([1])
    try:
        rt.pause()
        assert rt.paused
        x = rt.register("x")
        rt.insert_task([_logging_step(log, "ran")], [(x, WRITE)])
        time.sleep(0.1)
        assert log == []
        with pytest.raises(RuntimeError, match="paused"):
            rt.wait_all()
        rt.resume()
        rt.wait_all()
        assert log == ["ran"]
    finally:
        rt.shutdown()


def test_kernel_error_reaches_wait_all():
    def boom(part, n_parts):
        raise ZeroDivisionError("kernel failed")

    with Runtime([1, 1]) as rt:
        x = rt.register("x")
        rt.insert_task([boom], [(x, WRITE)])
        rt.insert_task([lambda p, n: None], [(x, READ)])
        with pytest.raises(ZeroDivisionError):
            rt.wait_all()
        # the error is reported once
        rt.wait_all()


def test_profile_and_trace():
    with Runtime([1, 1], trace=True, probe_period=0.001) as rt:
        handles = [rt.register(f"h{i}") for i in range(4)]
        for i, h in enumerate(handles):
            rt.insert_task([lambda p, n: time.sleep(0.01)], [(h, WRITE)], tags={"kind": "riemann", "ce": i})
        rt.wait_all()
        profiles = rt.profile_query()
        assert sum(p.tasks for p in profiles) == 4
        assert all(p.executing >= 0.0 and p.overhead >= 0.0 for p in profiles)
        assert sum(p.tasks for p in rt.profile_query()) == 0
    executing = [e for e in rt.trace if e.state == "executing"]
    assert len(executing) == 4
    assert {e.kind for e in executing} == {"riemann"}
    assert sorted(e.ce for e in executing) == [0, 1, 2, 3]
    assert all(e.t_end > e.t_start for e in rt.trace)
    assert rt.ready_samples


def test_insertion_rules():
    rt = Runtime([1])
    x = rt.register("x")
    with pytest.raises(ValueError):
        rt.insert_task([], [(x, "X")])
    rt.shutdown()
    with pytest.raises(RuntimeShutdown):
        rt.insert_task([], [(x, READ)])


def test_unregistered_handle_is_rejected():
    with Runtime([1]) as rt:
        stray = DataHandle(999, "stray")
        with pytest.raises(DependencyError, match="not registered"):
            rt.insert_task([], [(stray, WRITE)])
        with Runtime([1]) as other:
            foreign = other.register("x")
        with pytest.raises(DependencyError):
            rt.insert_task([], [(foreign, READ)])
        assert rt.inserted == 0


def _assert_profile_identity(profiles):
    for p in profiles:
        total = p.executing + p.sleeping + p.overhead
        assert total == pytest.approx(p.interval, rel=0.01)


def test_profile_states_add_up_to_interval_when_idle():
    with Runtime([1, 1]) as rt:
        rt.profile_query()
        for _ in range(8):
            time.sleep(0.01)
            profiles = rt.profile_query()
            _assert_profile_identity(profiles)
        # once settled an idle worker is asleep for nearly the whole interval
        assert all(p.sleeping > 0.5 * p.interval for p in profiles)


def test_profile_states_add_up_to_interval_while_busy():
    with Runtime([1, 1]) as rt:
        handles = [rt.register(f"h{i}") for i in range(6)]
        rt.profile_query()
        for h in handles:
            rt.insert_task([lambda p, n: time.sleep(0.02)], [(h, WRITE)])
        time.sleep(0.03)
        # queried mid-task: the open executing span is split
        _assert_profile_identity(rt.profile_query())
        rt.wait_all()
        time.sleep(0.01)
        profiles = rt.profile_query()
        _assert_profile_identity(profiles)
        assert sum(p.executing for p in profiles) > 0.0


def test_detached_task_fails_through_callback():
    with Runtime([1]) as rt:
        buffer = rt.register("buffer")
        log = []

        def receive(done):
            threading.Timer(0.02, lambda: done(ConnectionError("peer gone"))).start()

        rt.insert_task([], [(buffer, WRITE)], detached=receive)
        rt.insert_task([_logging_step(log, "unpack")], [(buffer, READ)])
        with pytest.raises(ConnectionError, match="peer gone"):
            rt.wait_all()


def _critical_chain_run(scheduler):
    """20 independent tasks at priority 0 inserted ahead of a 10-task chain at priority 4"""
    with Runtime([1, 1], scheduler=scheduler, probe_period=0.002) as rt:
        rt.pause()
        for i in range(20):
            rt.insert_task([_logging_step([], i, delay=0.01)], [(rt.register(f"free{i}"), WRITE)], priority=0)
        chain = rt.register("chain")
        for i in range(10):
            rt.insert_task([_logging_step([], i, delay=0.01)], [(chain, READ_WRITE)], priority=4)
        rt.profile_query()
        started = rt.clock()
        rt.resume()
        rt.wait_all()
        finished = rt.clock()
        sleeping = sum(p.sleeping for p in rt.profile_query())
        last_ready = max((s.t for s in rt.ready_samples if s.ready > 0 and s.t >= started), default=started)
    return sleeping, (last_ready - started) / (finished - started)


def test_priorities_keep_workers_busy_through_the_tail():
    fifo_sleeping, fifo_tail = _critical_chain_run("fifo")
    prio_sleeping, prio_tail = _critical_chain_run("prio")
    # fifo leaves the chain for last, so one worker idles while it runs
    assert prio_sleeping < fifo_sleeping
    assert prio_tail > fifo_tail
