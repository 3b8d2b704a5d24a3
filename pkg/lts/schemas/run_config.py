"""
Run configuration schema

A run is configured from a flat `key=value` file whose keys match the CLI
flag names (`theta-max` and `theta_max` are equivalent), then overridden
by flags.
"""
from pathlib import Path
from typing import List, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, Field, field_validator, model_validator

from lts.config import settings
from lts.schemas.mesh import MeshSpec, RefinementRegion


def parse_worker_spec(text: str) -> List[int]:
    """`"4x2,2x1"` -> `[2, 2, 2, 2, 1, 1]` (one lane count per worker)"""
    lanes: List[int] = []
    for chunk in text.replace(" ", "").split(","):
        if not chunk:
            continue
        count, _, size = chunk.lower().partition("x")
        if not size:
            size, count = count, "1"
        n_workers, n_lanes = int(count), int(size)
        if n_workers < 1 or n_lanes < 1:
            raise ValueError(f"invalid worker spec '{chunk}' (need WxS with W, S >= 1)")
        lanes.extend([n_lanes] * n_workers)
    if not lanes:
        raise ValueError("worker spec is empty")
    return lanes


def format_worker_spec(lanes: List[int]) -> str:
    groups: List[str] = []
    i = 0
    while i < len(lanes):
        j = i
        while j < len(lanes) and lanes[j] == lanes[i]:
            j += 1
        groups.append(f"{j - i}x{lanes[i]}")
        i = j
    return ",".join(groups)


class RunConfig(BaseModel):
    """All experiment axes of one run"""
    # mesh
    dim: int = Field(default=1, ge=1, le=2)
    nx: int = Field(default=64, ge=1)
    ny: int = Field(default=1, ge=1)
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    boundary: Literal["periodic", "transmissive"] = "periodic"
    refine: str = ""  # ';'-separated regions, see RefinementRegion.parse

    # physics
    physics: Literal["advection", "burgers"] = "advection"
    velocity: str = "1.0"  # comma-separated components (advection velocity or Burgers direction)
    initial: Literal["sine", "gaussian", "step", "linear"] = "sine"
    cfl: float = Field(default_factory=lambda: settings.CFL_TARGET, gt=0.0, lt=1.0)
    dt_cap: float = Field(default_factory=lambda: settings.DT_CAP, gt=0.0)

    # adaptive loop
    theta_max: int = Field(default=3, ge=0)
    iterations: int = Field(default=1, ge=1)

    # execution
    mode: Literal["reference", "tasks", "dist"] = "reference"
    ces: int = Field(default=1, ge=1)
    workers: str = "1x1"
    scheduler: Literal["fifo", "prio"] = "prio"
    pack: bool = True
    symbolic: bool = False
    priority_levels: int = Field(default_factory=lambda: settings.PRIORITY_LEVELS, ge=1)
    probe_period: float = Field(default_factory=lambda: settings.PROBE_PERIOD, gt=0.0)
    repartition_every: int = Field(default=0, ge=0)
    hold_insertion: bool = True  # insert each iteration while paused so the scheduler sees the whole DAG

    # distributed
    ranks: int = Field(default=1, ge=1)
    transport: Literal["loopback", "socket"] = "loopback"
    rank_id: Optional[int] = None
    listen: Optional[str] = None
    peers: Optional[str] = None

    # outputs
    snapshot: Optional[str] = None
    trace: Optional[str] = None
    summary: Optional[str] = None
    level_stats: Optional[str] = None  # CSV, one row per (iteration, level)
    dag_stats: Optional[str] = None  # CSV, one row per iteration

    @field_validator("workers")
    @classmethod
    def _valid_workers(cls, value: str) -> str:
        parse_worker_spec(value)
        return value

    @field_validator("refine")
    @classmethod
    def _valid_refine(cls, value: str) -> str:
        for chunk in value.split(";"):
            if chunk.strip():
                RefinementRegion.parse(chunk)
        return value

    @model_validator(mode="after")
    def _mode_fields(self) -> "RunConfig":
        if self.mode != "dist" and self.ranks != 1:
            raise ValueError("ranks > 1 requires mode=dist")
        if self.mode == "dist" and self.rank_id is not None:
            if not 0 <= self.rank_id < self.ranks:
                raise ValueError(f"rank-id {self.rank_id} outside [0, {self.ranks})")
            if self.transport != "socket":
                raise ValueError("a single-rank launch (rank-id) needs the socket transport")
            if not self.peers:
                raise ValueError("rank-id launch needs --peers host:port list")
        if self.symbolic and self.mode == "reference":
            raise ValueError("symbolic mode only applies to task generation")
        if self.symbolic and self.mode == "dist":
            raise ValueError("symbolic mode runs a single rank")
        if len([v for v in self.velocity.split(",") if v.strip()]) not in (1, self.dim):
            raise ValueError(f"velocity needs 1 or {self.dim} component(s), got '{self.velocity}'")
        return self

    @property
    def worker_lanes(self) -> List[int]:
        return parse_worker_spec(self.workers)

    @property
    def velocity_vector(self) -> List[float]:
        components = [float(v) for v in self.velocity.split(",") if v.strip()]
        if len(components) == 1 and self.dim == 2:
            components = components * 2
        return components

    @property
    def peer_list(self) -> List[str]:
        return [p.strip() for p in (self.peers or "").split(",") if p.strip()]

    def mesh_spec(self) -> MeshSpec:
        regions = [RefinementRegion.parse(c) for c in self.refine.split(";") if c.strip()]
        return MeshSpec(
            dim=self.dim, x0=self.x0, x1=self.x1, y0=self.y0, y1=self.y1,
            nx=self.nx, ny=self.ny if self.dim == 2 else 1,
            boundary=self.boundary, refinements=regions,
        )

    # ------------------------------------------------------------------
    # flat key=value file format
    # ------------------------------------------------------------------

    @classmethod
    def from_file(cls, path: str, **overrides) -> "RunConfig":
        raw = dotenv_values(path)
        values = {key.strip().replace("-", "_"): value for key, value in raw.items() if value is not None}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_file(self, path: str) -> None:
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key.replace('_', '-')}={value}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
