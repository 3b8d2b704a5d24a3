"""
Mesh generation schemas
"""
from typing import List, Literal, Optional
from pydantic import BaseModel, Field, field_validator, model_validator


class RefinementRegion(BaseModel):
    """Axis-aligned box whose base cells are split `scale` times per direction"""
    x0: float
    x1: float
    y0: Optional[float] = None
    y1: Optional[float] = None
    scale: int = 2

    @field_validator("scale")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 1 or value & (value - 1):
            raise ValueError(f"refinement scale must be a power of 2, got {value}")
        return value

    def contains(self, x: float, y: Optional[float] = None) -> bool:
        if not (self.x0 <= x <= self.x1):
            return False
        if y is None or self.y0 is None or self.y1 is None:
            return True
        return self.y0 <= y <= self.y1

    @classmethod
    def parse(cls, text: str) -> "RefinementRegion":
        """Parse `x0:x1:scale` (1D) or `x0:x1:y0:y1:scale` (2D)"""
        parts = [p for p in text.strip().split(":") if p]
        if len(parts) == 3:
            return cls(x0=float(parts[0]), x1=float(parts[1]), scale=int(parts[2]))
        if len(parts) == 5:
            return cls(
                x0=float(parts[0]), x1=float(parts[1]),
                y0=float(parts[2]), y1=float(parts[3]),
                scale=int(parts[4]),
            )
        raise ValueError(f"cannot parse refinement region '{text}'")

    def dump(self) -> str:
        if self.y0 is None:
            return f"{self.x0!r}:{self.x1!r}:{self.scale}"
        return f"{self.x0!r}:{self.x1!r}:{self.y0!r}:{self.y1!r}:{self.scale}"


class MeshSpec(BaseModel):
    """Box mesh with optional refinement regions"""
    dim: Literal[1, 2] = 1
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    nx: int = Field(default=4, ge=1)
    ny: int = Field(default=1, ge=1)
    boundary: Literal["periodic", "transmissive"] = "periodic"
    refinements: List[RefinementRegion] = Field(default_factory=list)

    @model_validator(mode="after")
    def _regions_inside_box(self) -> "MeshSpec":
        if self.x1 <= self.x0 or (self.dim == 2 and self.y1 <= self.y0):
            raise ValueError("mesh box must have positive extent")
        for region in self.refinements:
            if region.x0 < self.x0 or region.x1 > self.x1 or region.x1 <= region.x0:
                raise ValueError(f"refinement region {region.dump()} is not inside the box")
            if self.dim == 2:
                if region.y0 is None or region.y1 is None:
                    raise ValueError("2D refinement regions need y0 and y1")
                if region.y0 < self.y0 or region.y1 > self.y1 or region.y1 <= region.y0:
                    raise ValueError(f"refinement region {region.dump()} is not inside the box")
        return self
