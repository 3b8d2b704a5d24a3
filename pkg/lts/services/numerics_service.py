"""
Finite-volume kernels for a scalar conservation law

Every kernel works on global state arrays restricted to an index array of
cells or faces, so the same call serves the sequential integrator, a CE
component task or one lane of a parallel task. Reductions over the faces of
a cell walk the cell's face slots in a fixed order, which keeps results
bitwise identical whatever the grouping of cells into tasks.
"""
import logging
from abc import ABC, abstractmethod
from typing import Sequence, Tuple

import numpy as np

from lts.errors import DependencyError
from lts.services.mesh_service import BOUNDARY, Mesh

logger = logging.getLogger(__name__)


class FluxModel(ABC):
    """Physical flux f(w) of the conservation law dw/dt + div f(w) = 0"""

    name: str = "abstract"

    def __init__(self, vector: Sequence[float]):
        self.vector = np.asarray(vector, dtype=np.float64)

    def projected(self, normal: np.ndarray) -> np.ndarray:
        """vector . n for an (m, dim) array of normals, summed in axis order"""
        out = np.zeros(normal.shape[0])
        for d in range(normal.shape[1]):
            out = out + self.vector[d] * normal[:, d]
        return out

    @abstractmethod
    def normal_flux(self, w: np.ndarray, vn: np.ndarray) -> np.ndarray:
        """f(w) . n given the projected vector vn"""

    @abstractmethod
    def normal_speed(self, w: np.ndarray, vn: np.ndarray) -> np.ndarray:
        """|f'(w) . n|"""

    @abstractmethod
    def cell_speed(self, w: np.ndarray) -> np.ndarray:
        """Wave speed bound used for the CFL time step"""


class LinearAdvection(FluxModel):
    name = "advection"

    def normal_flux(self, w, vn):
        return w * vn

    def normal_speed(self, w, vn):
        return np.abs(vn) * np.ones_like(w)

    def cell_speed(self, w):
        return np.full_like(w, float(np.abs(self.vector).sum()))


class Burgers(FluxModel):
    name = "burgers"

    def normal_flux(self, w, vn):
        return 0.5 * w * w * vn

    def normal_speed(self, w, vn):
        return np.abs(w * vn)

    def cell_speed(self, w):
        return np.abs(w) * float(np.abs(self.vector).sum())


def make_flux_model(physics: str, vector: Sequence[float]) -> FluxModel:
    if physics == "advection":
        return LinearAdvection(vector)
    if physics == "burgers":
        return Burgers(vector)
    raise ValueError(f"unknown physics '{physics}'")


# ----------------------------------------------------------------------------
# Time step
# ----------------------------------------------------------------------------

def max_time_step(mesh: Mesh, w: np.ndarray, cells: np.ndarray, model: FluxModel,
                  cfl: float, dt_cap: float) -> np.ndarray:
    """CFL-limited step per cell; dt_cap where the wave speed vanishes"""
    speed = model.cell_speed(w[cells])
    h = mesh.char_length[cells]
    with np.errstate(divide="ignore"):
        dt = np.where(speed > 0.0, cfl * h / np.where(speed > 0.0, speed, 1.0), dt_cap)
    return np.minimum(dt, dt_cap)


# ----------------------------------------------------------------------------
# Time interpolation
# ----------------------------------------------------------------------------

def time_interpolate(w_n, w_star, theta):
    """w(t) = w^n + theta (w* - w^n); exact at theta 0 and 1"""
    w_n = np.asarray(w_n, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    value = np.where(theta == 0.0, w_n, np.where(theta >= 1.0, w_star, w_n + theta * (w_star - w_n)))
    return value if value.ndim else float(value)


def interpolation_factor(tick: int, tick_start: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """
    Fraction of the current step elapsed at `tick` (in units of dt_min).

    Factors are dyadic so they are exact; cells already past the end of
    their predictor (a finer neighbour seen from a coarser stage time) are
    clamped to 1.
    """
    span = np.left_shift(1, levels.astype(np.int64)).astype(np.float64)
    theta = (tick - tick_start).astype(np.float64) / span
    return np.clip(theta, 0.0, 1.0)


# ----------------------------------------------------------------------------
# Gradient, limiting, reconstruction
# ----------------------------------------------------------------------------

def gradient(mesh: Mesh, u: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Green-Gauss gradient from face-neighbour averages (one-sided on boundary faces)"""
    out = np.zeros((cells.size, mesh.dim))
    uc = u[cells]
    for k in range(mesh.max_faces):
        faces = mesh.cell_faces[cells, k]
        valid = faces >= 0
        safe = np.where(valid, faces, 0)
        nb = mesh.cell_nbrs[cells, k]
        interior = mesh.face_right[safe] != BOUNDARY
        face_value = np.where(interior, 0.5 * (uc + u[nb]), uc)
        weight = np.where(valid, mesh.cell_signs[cells, k] * mesh.face_area[safe] * face_value, 0.0)
        for d in range(mesh.dim):
            out[:, d] = out[:, d] + weight * mesh.face_normal[safe, d]
    return out / mesh.volume[cells][:, None]


def minmod(a, b):
    """Smaller magnitude when signs agree, zero otherwise"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    value = np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)
    return value if value.ndim else float(value)


def _dot(vectors: np.ndarray, grad: np.ndarray) -> np.ndarray:
    out = np.zeros(vectors.shape[0])
    for d in range(vectors.shape[1]):
        out = out + grad[:, d] * vectors[:, d]
    return out


def limit(mesh: Mesh, u: np.ndarray, grad: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """
    Minmod slope limiting.

    Each gradient component becomes the minmod of the unlimited component
    and the one-sided difference slopes towards every face neighbour, so in
    1D the slope is minmod((u_i - u_{i-1}) / h, (u_{i+1} - u_i) / h) and an
    extremum gets a zero slope. Boundary faces add no difference.
    """
    uc = u[cells]
    out = np.array(grad[cells], dtype=np.float64)
    for k in range(mesh.max_faces):
        faces = mesh.cell_faces[cells, k]
        safe = np.where(faces >= 0, faces, 0)
        neighbour = (faces >= 0) & (mesh.face_right[safe] != BOUNDARY)
        # centroid to neighbour centroid, periodic faces included
        offset = np.where((mesh.cell_signs[cells, k] > 0)[:, None],
                          mesh.face_dl[safe] - mesh.face_dr[safe],
                          mesh.face_dr[safe] - mesh.face_dl[safe])
        diff = u[mesh.cell_nbrs[cells, k]] - uc
        length2 = np.where(neighbour, np.sum(offset * offset, axis=1), 1.0)
        for d in range(mesh.dim):
            along = neighbour & (offset[:, d] != 0.0)
            slope = diff * offset[:, d] / length2
            out[:, d] = np.where(along, minmod(out[:, d], slope), out[:, d])
    return out


def reconstruct(mesh: Mesh, u: np.ndarray, grad: np.ndarray, faces: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """MUSCL extrapolation of left/right face states (right = left on boundary faces)"""
    left = mesh.face_left[faces]
    right = mesh.face_right[faces]
    interior = right != BOUNDARY
    safe_right = np.where(interior, right, left)
    w_left = u[left] + _dot(mesh.face_dl[faces], grad[left])
    w_right = u[safe_right] + _dot(mesh.face_dr[faces], grad[safe_right])
    return w_left, np.where(interior, w_right, w_left)


# ----------------------------------------------------------------------------
# Fluxes
# ----------------------------------------------------------------------------

def riemann_flux(w_left, w_right, normal, model: FluxModel):
    """Rusanov flux density F(wL, wR) . n"""
    w_left = np.atleast_1d(np.asarray(w_left, dtype=np.float64))
    w_right = np.atleast_1d(np.asarray(w_right, dtype=np.float64))
    normal = np.asarray(normal, dtype=np.float64).reshape(-1, model.vector.size)
    if normal.shape[0] == 1 and w_left.size > 1:
        normal = np.repeat(normal, w_left.size, axis=0)
    vn = model.projected(normal)
    speed = np.maximum(model.normal_speed(w_left, vn), model.normal_speed(w_right, vn))
    central = 0.5 * (model.normal_flux(w_left, vn) + model.normal_flux(w_right, vn))
    return central - 0.5 * speed * (w_right - w_left)


def face_fluxes(mesh: Mesh, w_left: np.ndarray, w_right: np.ndarray, faces: np.ndarray,
                model: FluxModel) -> np.ndarray:
    """Numerical flux times face area, oriented left -> right"""
    return riemann_flux(w_left, w_right, mesh.face_normal[faces], model) * mesh.face_area[faces]


def flux_sum(mesh: Mesh, face_values: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """
    Residual R_i = -sum_k sign_k * value[f_k] in face-slot order.

    Raises:
        DependencyError: a face of the cells has no committed value (NaN)
    """
    total = np.zeros(cells.size)
    for k in range(mesh.max_faces):
        faces = mesh.cell_faces[cells, k]
        valid = faces >= 0
        values = face_values[np.where(valid, faces, 0)]
        if np.any(valid & np.isnan(values)):
            missing = int(faces[valid & np.isnan(values)][0])
            raise DependencyError(f"face {missing} has no committed flux")
        total = total + np.where(valid, mesh.cell_signs[cells, k] * values, 0.0)
    return -total


def flux_integral(phi_start: np.ndarray, phi_end: np.ndarray, h) -> np.ndarray:
    """Trapezoidal flux integral over one step of length h"""
    return 0.5 * h * (phi_start + phi_end)


def accumulate_interface_flux(accumulated, fine_integral, first):
    """Coarse-side integral over a coarse step: first fine step assigns, the second adds"""
    accumulated = np.asarray(accumulated, dtype=np.float64)
    fine_integral = np.asarray(fine_integral, dtype=np.float64)
    value = np.where(first, fine_integral, accumulated + fine_integral)
    return value if value.ndim else float(value)


# ----------------------------------------------------------------------------
# Predictor / corrector
# ----------------------------------------------------------------------------

def extensive_prediction(W: np.ndarray, residual: np.ndarray, dt) -> np.ndarray:
    return W + dt * residual


def intensive_update(W: np.ndarray, volume: np.ndarray) -> np.ndarray:
    return W / volume


def predict(W: np.ndarray, residual: np.ndarray, dt, volume: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Heun stage 1: W* = W^n + dt R(w^n), w* = W*/V"""
    W_star = extensive_prediction(W, residual, dt)
    return W_star, intensive_update(W_star, volume)


def extensive_correction(W: np.ndarray, increment: np.ndarray) -> np.ndarray:
    """W^{n+1} = W^n + (sum of face flux integrals over the step)"""
    return W + increment


def correct(W: np.ndarray, increment: np.ndarray, volume: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    W_next = extensive_correction(W, increment)
    return W_next, intensive_update(W_next, volume)
