"""
Per-iteration summary schemas
"""
from typing import List, Optional
from pydantic import BaseModel, Field


class LevelShare(BaseModel):
    iteration: int
    tau: int
    cells: int
    cell_share: float  # percent
    cost: int
    cost_share: float  # percent


class DagStats(BaseModel):
    iteration: int
    n_ces: int
    elementary_tasks: int
    inserted_packs: int
    large_packs: int = 0
    comm_tasks: int = 0
    submission_time: float = 0.0


class IterationSummary(BaseModel):
    iteration: int
    rank: int = 0
    elapsed: float
    theta: int
    dt_min: float
    cost_ratio: float
    total_extensive: float
    executing: float = 0.0
    sleeping: float = 0.0
    overhead: float = 0.0
    elementary_tasks: Optional[int] = None
    inserted_packs: Optional[int] = None
    levels: List[LevelShare] = Field(default_factory=list)
