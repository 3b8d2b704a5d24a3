"""
Trace and profiling records

Field order of the models is the on-disk field order of the trace stream.
"""
from typing import Literal, Optional
from pydantic import BaseModel


class TraceEvent(BaseModel):
    """One worker-state interval"""
    record: Literal["state"] = "state"
    rank: int = 0
    worker: int
    state: Literal["executing", "sleeping", "overhead"]
    t_start: float
    t_end: float
    kind: Optional[str] = None
    ce: Optional[int] = None
    subiteration: Optional[int] = None


class ReadySample(BaseModel):
    """Number of ready tasks in the scheduler at time t"""
    record: Literal["ready"] = "ready"
    rank: int = 0
    t: float
    ready: int


class WorkerProfile(BaseModel):
    worker: int
    lanes: int = 1
    interval: float = 0.0
    executing: float = 0.0
    sleeping: float = 0.0
    overhead: float = 0.0
    tasks: int = 0
