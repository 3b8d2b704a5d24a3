"""
Solution snapshots and per-iteration tables

Snapshots are CSV with one row per cell (`cell,x[,y],w,W`), values printed
with 17 significant digits so they read back bit-exact.
"""
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from lts.services.mesh_service import Mesh

FLOAT_FORMAT = "%.17g"
CENTROID_TOLERANCE = 1e-12


def write_snapshot(path: Union[str, Path], mesh: Mesh, w: np.ndarray, W: np.ndarray) -> None:
    frame = pd.DataFrame({"cell": np.arange(mesh.n_cells)})
    frame["x"] = mesh.centroid[:, 0]
    if mesh.dim == 2:
        frame["y"] = mesh.centroid[:, 1]
    frame["w"] = w
    frame["W"] = W
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_snapshot(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = {"cell", "w", "W"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: not a snapshot (missing {sorted(missing)})")
    return frame.sort_values("cell").reset_index(drop=True)


def max_relative_difference(a: np.ndarray, b: np.ndarray, floor: float = 1e-300) -> float:
    """max |a - b| / max(|b|, floor) over all entries"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def compare_snapshots(path_a: Union[str, Path], path_b: Union[str, Path]) -> float:
    """
    Max relative difference of w between two snapshots of the same mesh.

    Raises:
        ValueError: cell counts or centroids do not match
    """
    first, second = read_snapshot(path_a), read_snapshot(path_b)
    if len(first) != len(second):
        raise ValueError(f"snapshots differ in cell count ({len(first)} vs {len(second)})")
    for column in ("x", "y"):
        if (column in first) != (column in second):
            raise ValueError(f"snapshots differ in dimension (column '{column}')")
        if column in first and not np.allclose(first[column].to_numpy(), second[column].to_numpy(),
                                               rtol=0.0, atol=CENTROID_TOLERANCE):
            raise ValueError(f"snapshots come from different meshes (column '{column}' differs)")
    return max_relative_difference(first["w"].to_numpy(), second["w"].to_numpy())


def write_records(path: Union[str, Path], records: Iterable[BaseModel]) -> None:
    """Flat pydantic records as CSV (list fields dropped)"""
    rows: List[dict] = []
    for record in records:
        rows.append({k: v for k, v in record.model_dump().items() if not isinstance(v, list)})
    pd.DataFrame(rows).to_csv(path, index=False)
