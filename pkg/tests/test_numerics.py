import numpy as np
import pytest

from lts.errors import DependencyError
from lts.schemas.mesh import MeshSpec
from lts.services import numerics_service as nx
from lts.services.mesh_service import generate_mesh


@pytest.fixture
def pair_mesh():
    return generate_mesh(MeshSpec(dim=1, nx=2, boundary="transmissive"))


def test_rusanov_burgers_shock():
    model = nx.make_flux_model("burgers", [1.0])
    assert nx.riemann_flux(1.0, 0.0, [1.0], model)[0] == pytest.approx(0.75)


def test_rusanov_advection_is_upwind():
    model = nx.make_flux_model("advection", [1.0])
    assert nx.riemann_flux(2.0, 0.0, [1.0], model)[0] == pytest.approx(2.0)
    assert nx.riemann_flux(0.0, 2.0, [1.0], model)[0] == pytest.approx(0.0)


def test_rusanov_is_consistent():
    model = nx.make_flux_model("burgers", [1.0, 0.0])
    w = np.array([-1.5, 0.3, 2.0])
    normal = np.array([[1.0, 0.0]] * 3)
    assert np.allclose(nx.riemann_flux(w, w, normal, model), 0.5 * w * w)


def test_unknown_physics():
    with pytest.raises(ValueError):
        nx.make_flux_model("euler", [1.0])


def test_time_step(pair_mesh):
    model = nx.make_flux_model("burgers", [1.0])
    cells = np.array([0, 1])
    dt = nx.max_time_step(pair_mesh, np.array([1.0, 3.0]), cells, model, cfl=0.9, dt_cap=1.0)
    assert dt == pytest.approx([0.45, 0.15])
    still = nx.max_time_step(pair_mesh, np.array([0.0, 0.0]), cells, model, cfl=0.9, dt_cap=0.7)
    assert still.tolist() == [0.7, 0.7]


def test_minmod():
    assert nx.minmod(1.0, 2.0) == 1.0
    assert nx.minmod(-3.0, -2.0) == -2.0
    assert nx.minmod(1.0, -1.0) == 0.0
    assert nx.minmod(0.0, 5.0) == 0.0


def test_time_interpolation_is_exact_at_endpoints():
    assert nx.time_interpolate(1.0, 3.0, 0.0) == 1.0
    assert nx.time_interpolate(1.0, 3.0, 1.0) == 3.0
    assert nx.time_interpolate(1.0, 3.0, 0.25) == 1.5


def test_interpolation_factor_is_clamped():
    levels = np.array([0, 1, 2, 2])
    tick_start = np.array([0, 0, 0, 4])
    assert nx.interpolation_factor(2, tick_start, levels).tolist() == [1.0, 1.0, 0.5, 0.0]


def test_linear_data_is_not_limited(line_mesh):
    # periodic wrap breaks linearity at the ends, so only interior cells
    u = np.array(line_mesh.centroid[:, 0])
    cells = np.arange(1, 7)
    grad = np.zeros((8, 1))
    grad[cells] = nx.gradient(line_mesh, u, cells)
    assert grad[cells, 0] == pytest.approx(np.ones(6))
    assert nx.limit(line_mesh, u, grad, cells)[:, 0] == pytest.approx(np.ones(6))


def test_extremum_gets_zero_slope(line_mesh):
    u = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    grad = np.zeros((8, 1))
    grad[3, 0] = 5.0
    assert nx.limit(line_mesh, u, grad, np.array([3]))[0, 0] == 0.0


def test_slope_is_minmod_of_one_sided_differences(line_mesh):
    h = 1.0 / 8
    u = np.array([0.0, 1.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0])
    cells = np.array([1])
    grad = np.zeros((8, 1))
    grad[cells] = nx.gradient(line_mesh, u, cells)
    assert grad[1, 0] == pytest.approx(1.5 / h)
    limited = nx.limit(line_mesh, u, grad, cells)[0, 0]
    assert limited == pytest.approx(nx.minmod(1.0 / h, 2.0 / h))
    assert limited == pytest.approx(8.0)


def test_limited_faces_stay_within_neighbour_bounds(refined_line_mesh, rng):
    mesh = refined_line_mesh
    u = rng.normal(size=mesh.n_cells)
    cells = np.arange(mesh.n_cells)
    grad = nx.limit(mesh, u, nx.gradient(mesh, u, cells), cells)
    w_left, w_right = nx.reconstruct(mesh, u, grad, np.arange(mesh.n_faces))
    for cell in cells:
        nbrs = mesh.cell_nbrs[cell]
        low, high = min(u[cell], u[nbrs].min()), max(u[cell], u[nbrs].max())
        for face in mesh.cell_faces[cell]:
            if face < 0:
                continue
            value = w_left[face] if mesh.face_left[face] == cell else w_right[face]
            assert low - 1e-12 <= value <= high + 1e-12


def test_reconstruct_copies_state_on_boundary(pair_mesh):
    u = np.array([1.0, 2.0])
    grad = np.array([[2.0], [0.0]])
    faces = np.arange(pair_mesh.n_faces)
    w_left, w_right = nx.reconstruct(pair_mesh, u, grad, faces)
    # faces: west boundary, 0|1, east boundary
    assert w_left.tolist() == [0.5, 1.5, 2.0]
    assert w_right.tolist() == [0.5, 2.0, 2.0]


def test_flux_sum_conserves_and_checks(line_mesh):
    values = np.linspace(0.0, 0.7, line_mesh.n_faces)
    residual = nx.flux_sum(line_mesh, values, np.arange(8))
    assert abs(residual.sum()) < 1e-14
    values[3] = np.nan
    with pytest.raises(DependencyError, match="face 3"):
        nx.flux_sum(line_mesh, values, np.array([3]))


def test_interface_accumulation():
    first = nx.accumulate_interface_flux(np.nan, 0.25, True)
    assert first == 0.25
    assert nx.accumulate_interface_flux(first, 0.5, False) == 0.75


def test_flux_integral_and_predict():
    assert nx.flux_integral(np.array([1.0]), np.array([3.0]), 0.5).tolist() == [1.0]
    W, w = nx.predict(np.array([2.0]), np.array([4.0]), 0.25, np.array([0.5]))
    assert (W.tolist(), w.tolist()) == ([3.0], [6.0])
