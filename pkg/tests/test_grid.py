import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import inflow_everywhere, random_velocity, velocity_problem
from contraction import BoundarySpec, Dirichlet, Field, Grid, InflowGiven, Neumann, PdeProblem
from contraction.errors import MissingBoundaryData, ShapeMismatch
from contraction.grid import (
    assemble_convection_matrix,
    central_gradient,
    diffusion_divergence,
    diffusion_matrix,
    min_symmetric_eigenvalue,
    upwind_gradient,
    upwind_psd_check,
)


def heat_problem(g=1.0, m=1):
    def flux(grad, x, t):
        return g * grad

    return PdeProblem(
        1, m, lambda phi, grad, x, t: np.zeros_like(phi),
        lambda phi, grad, x, t: np.zeros((1, 1, phi.shape[-1])),
        lambda phi, grad, x, t: np.zeros((1, m, phi.shape[-1])),
        g_flux=flux, lambda_bound=g, linear=True,
    )


# ---------------------------------------------------------------------------
# grid and field


def test_grid_layout_is_c_order():
    grid = Grid((1.0, 2.0), (3, 5))
    assert grid.size == 15
    assert grid.spacing == (0.5, 0.5)
    k = 1 * 5 + 3
    assert grid.coords[:, k].tolist() == [0.5, 1.5]
    assert grid.face_nodes("left").tolist() == [0, 1, 2, 3, 4]
    assert grid.face_nodes("top").tolist() == [4, 9, 14]


@pytest.mark.parametrize("lengths,nodes", [((1.0,), (2,)), ((-1.0,), (5,)), ((1.0, 1.0, 1.0), (4, 4, 4))])
def test_bad_grids_rejected(lengths, nodes):
    with pytest.raises(ValueError):
        Grid(lengths, nodes)


def test_trapezoid_weights_integrate_polynomials_of_degree_one():
    grid = Grid((2.0, 3.0), (11, 7), origin=(-1.0, 0.0))
    x, y = grid.coords
    assert grid.integrate(np.ones(grid.size)) == pytest.approx(6.0)
    assert grid.integrate(x + 2 * y) == pytest.approx(0.0 + 2 * 2 * 4.5)


def test_field_shape_checked_and_csv_round_trip(tmp_path):
    grid = Grid((1.0,), (6,))
    with pytest.raises(ShapeMismatch):
        Field(grid, np.zeros(5))
    f = Field(grid, np.vstack([grid.coords[0], grid.coords[0] ** 2]))
    f.to_csv(tmp_path / "f.csv")
    g = Field.from_csv(tmp_path / "f.csv", grid)
    assert np.allclose(g.values, f.values)


# ---------------------------------------------------------------------------
# upwind gradient


def test_linear_field_gradient_exact_both_directions():
    grid = Grid((1.0,), (21,))
    phi = grid.coords[0][None]
    assert np.allclose(upwind_gradient(grid, phi, 1.0, 0), 1.0)
    assert np.allclose(upwind_gradient(grid, phi, -1.0, 0), 1.0)


def test_quadratic_backward_stencil():
    grid = Grid((1.0,), (11,))
    x = grid.coords[0]
    d = grid.spacing[0]
    grad = upwind_gradient(grid, (x**2)[None], 1.0, 0)[0]
    assert np.allclose(grad[1:], 2 * x[1:] - d)
    fwd = upwind_gradient(grid, (x**2)[None], -1.0, 0)[0]
    assert np.allclose(fwd[:-1], 2 * x[:-1] + d)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5), nx=st.integers(3, 20),
       ny=st.integers(3, 20), seed=st.integers(0, 1000))
def test_upwind_gradient_exact_on_affine_fields(a, b, c, nx, ny, seed):
    grid = Grid((1.3, 0.7), (nx, ny))
    x, y = grid.coords
    phi = (a + b * x + c * y)[None]
    vel = np.random.default_rng(seed).normal(size=grid.size)
    assert np.allclose(upwind_gradient(grid, phi, vel, 0), b, atol=1e-9)
    assert np.allclose(upwind_gradient(grid, phi, vel, 1), c, atol=1e-9)


def test_upwind_gradient_shape_errors():
    grid = Grid((1.0,), (5,))
    with pytest.raises(ShapeMismatch):
        upwind_gradient(grid, np.zeros((1, 4)), 1.0, 0)
    with pytest.raises(ShapeMismatch):
        upwind_gradient(grid, np.zeros((1, 5)), np.ones(3), 0)


def test_central_gradient_second_order():
    grid = Grid((np.pi,), (201,))
    x = grid.coords[0]
    g = central_gradient(grid, np.sin(x)[None])[0, 0]
    assert np.max(np.abs(g - np.cos(x))) < 1e-3


# ---------------------------------------------------------------------------
# convection matrix


def test_backward_stencil_rows():
    grid = Grid((1.0,), (6,))
    c = 2.0
    vel = np.full((1, grid.size), c)
    op = assemble_convection_matrix(velocity_problem(vel), grid, BoundarySpec({"left": Dirichlet(0.0)}), 0.0)
    C = op.matrices[0].toarray()
    d = grid.spacing[0]
    assert op.kept[0].tolist() == [1, 2, 3, 4, 5]
    # row for node 3 (index 2 after deletion): -c/d at node 2, +c/d at node 3
    assert C[2, 1] == pytest.approx(-c / d)
    assert C[2, 2] == pytest.approx(c / d)
    assert np.count_nonzero(C[2]) == 2


def test_zero_velocity_gives_zero_matrix():
    grid = Grid((1.0, 1.0), (6, 6))
    op = assemble_convection_matrix(velocity_problem(np.zeros((2, grid.size))), grid, BoundarySpec({}), 0.0)
    assert op.matrices[0].nnz == 0


def test_one_given_node_removed():
    grid = Grid((1.0,), (5,))
    op = assemble_convection_matrix(velocity_problem(np.ones((1, 5))), grid,
                                    BoundarySpec({"left": InflowGiven(0.0)}), 0.0)
    assert op.matrices[0].shape == (4, 4)


def test_matrix_matches_upwind_gradient():
    rng = np.random.default_rng(1)
    grid = Grid((1.0, 2.0), (9, 13))
    vel = random_velocity(rng, grid)
    bounds = inflow_everywhere(grid)
    problem = velocity_problem(vel)
    op = assemble_convection_matrix(problem, grid, bounds, 0.0, state=np.zeros((1, grid.size)))
    u = rng.normal(size=grid.size)
    u[op.given[0]] = 0.0
    direct = sum(vel[j] * upwind_gradient(grid, u, vel[j], j) for j in range(2))
    # nodes whose stencil would leave the grid drop that term in the matrix
    multi = np.unravel_index(np.arange(grid.size), grid.shape)
    interior = np.all([(m > 0) & (m < s - 1) for m, s in zip(multi, grid.shape)], axis=0)
    keep = op.kept[0]
    assert np.allclose((op.matrices[0] @ u[keep])[interior[keep]], direct[keep][interior[keep]])


def test_missing_inflow_data_raises():
    grid = Grid((1.0,), (5,))
    with pytest.raises(MissingBoundaryData):
        assemble_convection_matrix(velocity_problem(np.ones((1, 5))), grid, BoundarySpec({}), 0.0)


# ---------------------------------------------------------------------------
# PSD property


def test_constant_velocity_psd():
    grid = Grid((1.0,), (30,))
    res = upwind_psd_check(velocity_problem(np.ones((1, 30))), grid, BoundarySpec({"left": InflowGiven(0.0)}), 0.0)
    assert res.is_psd


def test_zero_velocity_psd_with_zero_min():
    grid = Grid((1.0,), (10,))
    res = upwind_psd_check(velocity_problem(np.zeros((1, 10))), grid, BoundarySpec({}), 0.0)
    assert res.is_psd
    assert res.min_eig == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), dims=st.sampled_from([1, 2]), n=st.integers(4, 24))
def test_upwind_psd_against_dense_eigensolver(seed, dims, n):
    rng = np.random.default_rng(seed)
    grid = Grid((1.0,) * dims, (n,) * dims)
    vel = random_velocity(rng, grid)
    res = upwind_psd_check(velocity_problem(vel), grid, inflow_everywhere(grid), 0.0,
                           state=np.zeros((1, grid.size)))
    assert res.min_eig >= -1e-10


def test_sparse_and_dense_smallest_eigenvalue_agree():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(1600, 1600)) * (rng.random((1600, 1600)) < 0.003)
    m = a + a.T + 3 * np.eye(1600)
    import scipy.sparse as sp

    dense = np.linalg.eigvalsh(m)[0]
    assert min_symmetric_eigenvalue(sp.csr_matrix(m)) == pytest.approx(dense, abs=1e-8)


# ---------------------------------------------------------------------------
# diffusion


def test_second_difference_matrix():
    grid = Grid((1.0,), (6,))
    g = 2.5
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Dirichlet(0.0)})
    D = diffusion_matrix(heat_problem(g), grid, bounds, 0.0).matrix.toarray()
    d2 = grid.spacing[0] ** 2
    expected = g / d2 * (np.diag(np.full(4, -2.0)) + np.diag(np.ones(3), 1) + np.diag(np.ones(3), -1))
    assert np.allclose(D, expected)


def test_zero_diffusion_gives_zero_matrix():
    grid = Grid((1.0,), (6,))
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Dirichlet(0.0)})
    assert diffusion_matrix(heat_problem(0.0), grid, bounds, 0.0).matrix.nnz == 0


@pytest.mark.parametrize("nodes", [51, 201])
def test_laplacian_spectrum_approaches_one(nodes):
    grid = Grid((np.pi,), (nodes,))
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Dirichlet(0.0)})
    lam = min_symmetric_eigenvalue(-diffusion_matrix(heat_problem(), grid, bounds, 0.0).matrix)
    d = grid.spacing[0]
    # exact discrete eigenvalue of the three-point stencil
    assert lam == pytest.approx(2 * (1 - np.cos(d)) / d**2, rel=1e-10)
    assert abs(lam - 1) < 0.01


def test_divergence_matches_matrix_for_linear_flux():
    grid = Grid((1.0, 2.0), (9, 11))
    bounds = BoundarySpec({f: Dirichlet(0.0) for f in grid.faces})
    op = diffusion_matrix(heat_problem(1.5, 2), grid, bounds, 0.0)
    rng = np.random.default_rng(2)
    u = np.zeros(grid.size)
    u[op.kept] = rng.normal(size=op.kept.size)
    div = diffusion_divergence(heat_problem(1.5, 2), grid, bounds, u[None], 0.0)[0]
    assert np.allclose(div[op.kept], op.matrix @ u[op.kept])


def test_neumann_flux_enters_divergence():
    grid = Grid((1.0,), (11,))
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Neumann(1.0)})
    x = grid.coords[0]
    # phi = x satisfies both conditions; its Laplacian is zero
    div = diffusion_divergence(heat_problem(), grid, bounds, x[None], 0.0)[0]
    assert np.allclose(div[1:], 0.0, atol=1e-9)
