import numpy as np
import pytest

from lts.schemas.mesh import MeshSpec, RefinementRegion
from lts.services.adaptive_service import SolverState, initial_profile
from lts.services.mesh_service import generate_mesh
from lts.services.numerics_service import make_flux_model


def make_state(mesh, physics="advection", velocity=(1.0,), initial="sine", cfl=0.9, dt_cap=1.0):
    model = make_flux_model(physics, list(velocity)[: mesh.dim])
    w0 = initial_profile(initial, mesh, [0.0] * mesh.dim, [1.0] * mesh.dim)
    return SolverState.create(mesh, model, w0, cfl=cfl, dt_cap=dt_cap)


@pytest.fixture
def line_mesh():
    """8 uniform periodic cells on [0, 1]"""
    return generate_mesh(MeshSpec(dim=1, nx=8, boundary="periodic"))


@pytest.fixture
def refined_line_mesh():
    """16 base cells, the middle half split 4x"""
    return generate_mesh(MeshSpec(
        dim=1, nx=16, boundary="periodic",
        refinements=[RefinementRegion(x0=0.375, x1=0.625, scale=4)],
    ))


@pytest.fixture
def skewed_mesh():
    """8x8 periodic box with the lower-left quadrant split 4x"""
    return generate_mesh(MeshSpec(
        dim=2, nx=8, ny=8, boundary="periodic",
        refinements=[RefinementRegion(x0=0.0, x1=0.5, y0=0.0, y1=0.5, scale=4)],
    ))


@pytest.fixture
def line_state(line_mesh):
    return make_state(line_mesh)


@pytest.fixture
def refined_line_state(refined_line_mesh):
    return make_state(refined_line_mesh)


@pytest.fixture
def skewed_state(skewed_mesh):
    return make_state(skewed_mesh, velocity=(1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
