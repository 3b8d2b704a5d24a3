import pandas as pd
import pytest

from lts.schemas.trace import ReadySample, TraceEvent
from lts.utils.trace_io import (
    export_report,
    kind_totals,
    read_trace,
    state_delta,
    state_totals,
    write_trace,
)


def _events():
    return [
        TraceEvent(worker=0, state="executing", t_start=0.0, t_end=1.5, kind="riemann", ce=0, subiteration=1),
        TraceEvent(worker=0, state="sleeping", t_start=1.5, t_end=2.0),
        TraceEvent(worker=1, state="executing", t_start=0.0, t_end=0.5, kind="riemann", ce=1, subiteration=1),
        TraceEvent(worker=1, state="executing", t_start=0.5, t_end=1.0, kind="flux_sum", ce=1, subiteration=1),
        TraceEvent(worker=1, state="overhead", t_start=1.0, t_end=2.0),
    ]


def _lookup(frame, worker, state, column="seconds"):
    row = frame[(frame["worker"] == worker) & (frame["state"] == state)]
    return float(row[column].iloc[0])


def test_state_totals_known_durations():
    totals = state_totals(_events())
    assert _lookup(totals, 0, "executing") == 1.5
    assert _lookup(totals, 0, "sleeping") == 0.5
    assert _lookup(totals, 1, "executing") == 1.0
    assert _lookup(totals, 0, "executing", "share") == pytest.approx(75.0)
    assert _lookup(totals, 1, "overhead", "share") == pytest.approx(50.0)


def test_state_totals_ignore_record_order():
    forward = state_totals(_events())
    backward = state_totals(list(reversed(_events())))
    pd.testing.assert_frame_equal(forward, backward)


def test_kind_totals():
    kinds = kind_totals(_events()).set_index("kind")
    assert kinds.loc["riemann", "tasks"] == 2
    assert kinds.loc["riemann", "seconds"] == pytest.approx(2.0)
    assert kinds.loc["flux_sum", "tasks"] == 1


def test_empty_trace_gives_empty_tables(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    events, samples = read_trace(path)
    assert events == [] and samples == []
    assert state_totals(events).empty
    assert kind_totals(events).empty


def test_write_then_read(tmp_path):
    path = tmp_path / "trace.jsonl"
    samples = [ReadySample(t=0.0, ready=3), ReadySample(t=0.001, ready=1)]
    assert write_trace(path, _events(), samples) == 7
    events, read_samples = read_trace(path)
    assert events == _events()
    assert read_samples == samples


def test_unknown_record_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"record": "other"}\n')
    with pytest.raises(ValueError, match="unknown trace record"):
        read_trace(path)


def test_state_delta():
    slower = [e.model_copy(update={"t_end": e.t_end + 1.0}) if e.state == "sleeping" else e for e in _events()]
    delta = state_delta(_events(), slower).set_index("state")
    assert delta.loc["sleeping", "delta"] == pytest.approx(1.0)
    assert delta.loc["executing", "delta"] == pytest.approx(0.0)


def test_export_report(tmp_path):
    written = export_report(_events(), [ReadySample(t=0.0, ready=2)], tmp_path / "report")
    assert sorted(p.name for p in written) == ["gantt.csv", "kinds.csv", "ready.csv", "states.csv"]
    gantt = pd.read_csv(tmp_path / "report" / "gantt.csv")
    assert len(gantt) == 5
    assert list(gantt["worker"]) == [0, 0, 1, 1, 1]
