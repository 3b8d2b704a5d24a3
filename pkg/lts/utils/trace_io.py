"""
Execution traces

One JSON object per line: worker-state intervals (`record: "state"`) and
ready-count samples (`record: "ready"`). The report aggregates them per
worker with pandas and can export Gantt-ready and ready-count CSVs.
"""
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import pandas as pd
from pydantic import TypeAdapter

from lts.schemas.trace import ReadySample, TraceEvent

_EVENT = TypeAdapter(TraceEvent)
_SAMPLE = TypeAdapter(ReadySample)


def write_trace(path: Union[str, Path], events: Iterable[TraceEvent], samples: Iterable[ReadySample] = ()) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for record in list(events) + list(samples):
            handle.write(record.model_dump_json() + "\n")
            count += 1
    return count


def read_trace(path: Union[str, Path]) -> Tuple[List[TraceEvent], List[ReadySample]]:
    events: List[TraceEvent] = []
    samples: List[ReadySample] = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            if '"record":"ready"' in line.replace(" ", ""):
                samples.append(_SAMPLE.validate_json(line))
            elif '"record":"state"' in line.replace(" ", ""):
                events.append(_EVENT.validate_json(line))
            else:
                raise ValueError(f"{path}:{number}: unknown trace record")
    return events, samples


def state_totals(events: Iterable[TraceEvent]) -> pd.DataFrame:
    """Seconds per (rank, worker, state) plus each state's share of the worker's time"""
    frame = pd.DataFrame([e.model_dump() for e in events])
    if frame.empty:
        return pd.DataFrame(columns=["rank", "worker", "state", "seconds", "share"])
    frame["seconds"] = frame["t_end"] - frame["t_start"]
    totals = frame.groupby(["rank", "worker", "state"], as_index=False)["seconds"].sum()
    per_worker = totals.groupby(["rank", "worker"])["seconds"].transform("sum")
    totals["share"] = 100.0 * totals["seconds"] / per_worker
    return totals


def state_delta(baseline: Iterable[TraceEvent], other: Iterable[TraceEvent]) -> pd.DataFrame:
    """Per-state seconds of two traces side by side, summed over workers

    Used to compare a fifo run with a prio run of the same configuration.
    """
    def per_state(events: Iterable[TraceEvent]) -> pd.Series:
        totals = state_totals(events)
        return totals.groupby("state")["seconds"].sum()

    frame = pd.DataFrame({"baseline": per_state(baseline), "other": per_state(other)}).fillna(0.0)
    frame["delta"] = frame["other"] - frame["baseline"]
    return frame.rename_axis("state").reset_index()


def gantt_frame(events: Iterable[TraceEvent]) -> pd.DataFrame:
    """One row per interval, sorted by worker then start"""
    frame = pd.DataFrame([e.model_dump(exclude={"record"}) for e in events])
    if frame.empty:
        return pd.DataFrame(columns=["rank", "worker", "state", "t_start", "t_end", "kind", "ce", "subiteration"])
    return frame.sort_values(["rank", "worker", "t_start"]).reset_index(drop=True)


def ready_frame(samples: Iterable[ReadySample]) -> pd.DataFrame:
    frame = pd.DataFrame([s.model_dump(exclude={"record"}) for s in samples])
    if frame.empty:
        return pd.DataFrame(columns=["rank", "t", "ready"])
    return frame.sort_values(["rank", "t"]).reset_index(drop=True)


def export_report(events: List[TraceEvent], samples: List[ReadySample], out_dir: Union[str, Path]) -> List[Path]:
    """Writes states.csv, kinds.csv, gantt.csv and ready.csv into out_dir"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {
        "states.csv": state_totals(events),
        "kinds.csv": kind_totals(events),
        "gantt.csv": gantt_frame(events),
        "ready.csv": ready_frame(samples),
    }
    written = []
    for name, frame in tables.items():
        frame.to_csv(out / name, index=False)
        written.append(out / name)
    return written


def kind_totals(events: Iterable[TraceEvent]) -> pd.DataFrame:
    """Executing seconds and task counts per task kind"""
    frame = pd.DataFrame([e.model_dump() for e in events if e.state == "executing"])
    if frame.empty:
        return pd.DataFrame(columns=["kind", "tasks", "seconds"])
    frame["seconds"] = frame["t_end"] - frame["t_start"]
    frame["kind"] = frame["kind"].fillna("-")
    return frame.groupby("kind", as_index=False).agg(tasks=("seconds", "size"), seconds=("seconds", "sum"))
