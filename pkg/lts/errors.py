"""
Solver and runtime exceptions
"""
from typing import Optional


class DependencyError(RuntimeError):
    """A kernel read data nobody produced, or wrote data it never declared"""


class RuntimeShutdown(RuntimeError):
    pass


class NumericalBlowUp(RuntimeError):
    """Non-finite state detected, usually a CFL violation"""

    def __init__(self, message: str, iteration: Optional[int] = None,
                 subiteration: Optional[int] = None, cell: Optional[int] = None):
        self.iteration = iteration
        self.subiteration = subiteration
        self.cell = cell
        where = []
        if iteration is not None:
            where.append(f"iteration={iteration}")
        if subiteration is not None:
            where.append(f"subiteration={subiteration}")
        if cell is not None:
            where.append(f"cell={cell}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class TransportError(RuntimeError):
    def __init__(self, rank: int, message: str):
        self.rank = rank
        super().__init__(f"[rank {rank}] {message}")
