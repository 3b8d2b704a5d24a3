#!/usr/bin/env python3
"""
Scheduler comparison on the skewed benchmark

Runs one iteration five times per scheduler and compares the medians:
total sleeping time under "prio" must not exceed "fifo", and ready tasks
must remain in the queue further into the iteration under "prio".
Exits with status 1 when either check fails.

Usage: python scripts/compare_schedulers.py [config] [workers] [repeats]
"""
import os
import statistics
import sys
import tempfile

import pandas as pd

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from lts.schemas.run_config import RunConfig
from lts.services.run_service import RunResult, RunService

config_path = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
    os.path.dirname(__file__), '..', 'configs', 'skewed_benchmark.env')
workers = sys.argv[2] if len(sys.argv) > 2 else "8x1"
repeats = int(sys.argv[3]) if len(sys.argv) > 3 else 5


def ready_tail(result: RunResult) -> float:
    """Share of the executing window that elapses before the queue runs dry for good"""
    spans = [e for e in result.trace if e.state == "executing"]
    start = min(e.t_start for e in spans)
    end = max(e.t_end for e in spans)
    last = max((s.t for s in result.ready_samples if s.ready > 0 and start <= s.t <= end), default=start)
    return (last - start) / max(end - start, 1e-12)


print("=" * 70)
print(f"Scheduler comparison on {config_path} with workers {workers}, {repeats} runs each")
print("=" * 70)

rows = []
with tempfile.TemporaryDirectory() as scratch:
    for scheduler in ("fifo", "prio"):
        for attempt in range(repeats):
            config = RunConfig.from_file(config_path, mode="tasks", scheduler=scheduler, workers=workers,
                                         iterations=1, trace=os.path.join(scratch, "trace.jsonl"))
            result = RunService(config).run()
            stats = result.dag_stats[0]
            rows.append({
                "scheduler": scheduler, "run": attempt,
                "elapsed": result.summaries[0].elapsed,
                "sleeping": result.summaries[0].sleeping,
                "ready_tail": ready_tail(result),
                "pack_ratio": stats.elementary_tasks / max(stats.inserted_packs, 1),
            })
            print(f"✅ {scheduler:4s} run {attempt} elapsed={rows[-1]['elapsed']:.3f}s")

frame = pd.DataFrame(rows)
medians = frame.groupby("scheduler")[["elapsed", "sleeping", "ready_tail", "pack_ratio"]].median()
print()
print(medians.to_string())

checks = {
    "prio sleeping <= fifo sleeping": medians.loc["prio", "sleeping"] <= medians.loc["fifo", "sleeping"],
    "prio ready tail > fifo ready tail": medians.loc["prio", "ready_tail"] > medians.loc["fifo", "ready_tail"],
}
print()
for label, passed in checks.items():
    print(f"{'✅' if passed else '❌'} {label}")
print(f"sleeping spread (std): fifo {statistics.pstdev(frame[frame.scheduler == 'fifo'].sleeping):.3f}s, "
      f"prio {statistics.pstdev(frame[frame.scheduler == 'prio'].sleeping):.3f}s")
sys.exit(0 if all(checks.values()) else 1)
