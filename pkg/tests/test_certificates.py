import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contraction import (
    BoundarySpec,
    Dirichlet,
    Grid,
    MetricTransform,
    Neumann,
    PdeProblem,
    apply_metric,
    combined_certificate,
    diffusion_rate_bound,
    first_order_rate,
)
from contraction.certificates import certificate_matrix, classify
from contraction.errors import EmptySampleSet, MissingLambdaBound, SingularTheta
from contraction.grid import diffusion_matrix, min_symmetric_eigenvalue
from contraction.scenarios import load_scenario


def reaction(jac, m=1):
    """Constant linear reaction ``h = J phi`` with no convection."""
    jac = np.asarray(jac, dtype=float)
    n = jac.shape[0]

    def h(phi, grad, x, t):
        return np.einsum("il,lN->iN", jac, phi)

    def dh(phi, grad, x, t):
        return np.repeat(jac[:, :, None], phi.shape[-1], axis=2)

    def vel(phi, grad, x, t):
        return np.zeros((n, m, phi.shape[-1]))

    return PdeProblem(n, m, h, dh, vel, linear=True)


def diffusive(lam, m, n=1):
    def flux(grad, x, t):
        return grad

    base = reaction(np.zeros((n, n)), m)
    return PdeProblem(n, m, base.h, base.dh_dPhi, base.dh_dGradPhi, g_flux=flux, lambda_bound=lam)


def test_compressing_transport_rate_half():
    sc = load_scenario("transport_compress", {})
    cert = first_order_rate(sc.problem, sc.grid, sc.samples, [0.0])
    assert cert.classification == "contracting"
    assert cert.rate == pytest.approx(0.5, abs=1e-9)
    assert cert.lambda_V == pytest.approx(-0.5, abs=1e-9)


def test_certificate_matrix_of_linear_reaction():
    grid = Grid((1.0,), (5,))
    J = np.array([[-1.0, 4.0], [0.0, -1.0]])
    F = certificate_matrix(reaction(J), grid, np.zeros((2, 5)), 0.0)
    assert F.shape == (5, 2, 2)
    assert np.allclose(F[0], [[1.0, -2.0], [-2.0, 1.0]])


def test_empty_samples_rejected():
    grid = Grid((1.0,), (5,))
    with pytest.raises(EmptySampleSet):
        first_order_rate(reaction([[-1.0]]), grid, [], [0.0])
    with pytest.raises(EmptySampleSet):
        first_order_rate(reaction([[-1.0]]), grid, [np.zeros((1, 5))], [])


@pytest.mark.parametrize("lam,bound,absmax,expected", [
    (-0.3, 0.0, 0.3, ("contracting", 0.3)),
    (0.2, 0.5, 0.2, ("contracting", 0.3)),
    (0.0, 0.0, 0.0, ("indifferent", 0.0)),
    (0.0, 0.0, 1.0, ("semi-contracting", 0.0)),
    (0.4, 0.1, 0.4, ("inconclusive", 0.0)),
])
def test_classification_table(lam, bound, absmax, expected):
    cls, rate = classify(lam, bound, absmax)
    assert cls == expected[0]
    assert rate == pytest.approx(expected[1])


def test_fourier_bound_one_dimensional():
    grid = Grid((np.pi,), (21,))
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Dirichlet(0.0)})
    assert diffusion_rate_bound(diffusive(1.0, 1), grid, bounds) == pytest.approx(1.0)


def test_fourier_bound_zero_with_neumann_faces():
    grid = Grid((np.pi,), (21,))
    bounds = BoundarySpec({"left": Neumann(0.0), "right": Neumann(0.0)})
    assert diffusion_rate_bound(diffusive(3.0, 1), grid, bounds) == 0.0


def test_fourier_bound_two_dimensional_against_fine_laplacian():
    lengths = (1.0, 2.0)
    bounds = BoundarySpec({f: Dirichlet(0.0) for f in ("left", "right", "bottom", "top")})
    bound = diffusion_rate_bound(diffusive(1.0, 2), Grid(lengths, (5, 5)), bounds)
    assert bound == pytest.approx(np.pi**2 * (1 + 0.25))
    fine = Grid(lengths, (61, 121))
    lam = min_symmetric_eigenvalue(-diffusion_matrix(diffusive(1.0, 2), fine, bounds, 0.0).matrix)
    assert lam == pytest.approx(bound, rel=1e-3)


def test_fourier_bound_aggregates_components():
    grid = Grid((np.pi,), (11,))
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Dirichlet(0.0)})
    p = diffusive(np.array([[1.0], [3.0]]), 1, n=2)
    assert diffusion_rate_bound(p, grid, bounds) == pytest.approx(1.0)
    assert diffusion_rate_bound(p, grid, bounds, aggregate="sum") == pytest.approx(4.0)
    with pytest.raises(ValueError):
        diffusion_rate_bound(p, grid, bounds, aggregate="max")


def test_diffusion_without_lambda_bound():
    base = diffusive(1.0, 1)
    p = PdeProblem(1, 1, base.h, base.dh_dPhi, base.dh_dGradPhi, g_flux=base.g_flux)
    with pytest.raises(MissingLambdaBound):
        diffusion_rate_bound(p, Grid((1.0,), (5,)), BoundarySpec({}))


def test_wafer_reaction_adds_to_diffusion():
    sc = load_scenario("wafer_disk", {"h": 1.0, "phi_min": 0.5})
    cert = combined_certificate(sc.problem, sc.grid, sc.bounds, sc.samples, sc.t_samples)
    assert cert.lambda_V == pytest.approx(-4 * 0.5**3)
    assert cert.rate == pytest.approx(0.5)


def test_zero_dynamics_indifferent():
    grid = Grid((1.0,), (7,))
    cert = combined_certificate(reaction([[0.0]]), grid, BoundarySpec({}), [np.zeros((1, 7))], [0.0])
    assert cert.classification == "indifferent"
    assert "classification: indifferent" in cert.report()


def test_bernoulli_indifferent():
    sc = load_scenario("bernoulli_indifferent", {})
    cert = first_order_rate(sc.problem, sc.grid, sc.samples, sc.t_samples)
    assert cert.classification == "indifferent"


def test_rotation_flow_contracts_strain_flow_does_not():
    rot = load_scenario("navier_stokes_certificate", {"field": "rotation"})
    cert = combined_certificate(rot.problem, rot.grid, rot.bounds, rot.samples, rot.t_samples)
    assert cert.classification == "contracting"
    assert cert.rate == pytest.approx(rot.expected.rate, rel=1e-6)
    strain = load_scenario("navier_stokes_certificate", {"field": "strain", "g": 0.0})
    cert = combined_certificate(strain.problem, strain.grid, strain.bounds, strain.samples, strain.t_samples)
    assert cert.classification == "inconclusive"


# ---------------------------------------------------------------------------
# metrics


def test_identity_metric_leaves_problem_unchanged():
    grid = Grid((1.0,), (6,))
    J = np.array([[-1.0, 4.0], [0.0, -1.0]])
    p = reaction(J)
    q = apply_metric(p, MetricTransform(np.eye(2)))
    phi = np.random.default_rng(0).normal(size=(2, 6))
    grad = np.zeros((2, 1, 6))
    assert np.allclose(q.h(phi, grad, grid.coords, 0.0), p.h(phi, grad, grid.coords, 0.0))
    assert np.allclose(q.dh_dPhi(phi, grad, grid.coords, 0.0), p.dh_dPhi(phi, grad, grid.coords, 0.0))


def test_diagonal_metric_scales_coupling():
    grid = Grid((1.0,), (6,))
    J = np.array([[-1.0, 4.0], [0.0, -1.0]])
    q = apply_metric(reaction(J), MetricTransform(np.diag([2.0, 1.0])))
    jac = q.dh_dPhi(np.zeros((2, 6)), np.zeros((2, 1, 6)), grid.coords, 0.0)[:, :, 0]
    assert np.allclose(jac, [[-1.0, 8.0], [0.0, -1.0]])
    before = first_order_rate(reaction(J), grid, [np.zeros((2, 6))], [0.0])
    after = first_order_rate(q, grid, [np.zeros((2, 6))], [0.0])
    # sym(-J) has eigenvalues 1 +- 2, sym(-theta J theta^-1) has 1 +- 4
    assert before.lambda_V == pytest.approx(3.0)
    assert after.lambda_V == pytest.approx(5.0)


def test_metric_can_certify_what_identity_cannot():
    grid = Grid((1.0,), (6,))
    # d(phi)/dt = -J phi is stable, but sym(-J) is indefinite
    J = np.array([[1.0, 4.0], [0.0, 1.0]])
    zero = [np.zeros((2, 6))]
    assert not first_order_rate(reaction(J), grid, zero, [0.0]).contracting
    cert = first_order_rate(apply_metric(reaction(J), MetricTransform(np.diag([0.1, 1.0]))), grid, zero, [0.0])
    assert cert.contracting
    assert cert.rate == pytest.approx(0.8)


@pytest.mark.parametrize("theta", [np.zeros((2, 2)), [[1.0, 2.0], [2.0, 4.0]], np.ones((2, 3))])
def test_singular_theta_rejected(theta):
    with pytest.raises(SingularTheta):
        MetricTransform(theta)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(0.2, 5), min_size=2, max_size=2))
def test_metric_preserves_jacobian_spectrum(entries, diag):
    J = np.array(entries).reshape(2, 2)
    grid = Grid((1.0,), (4,))
    q = apply_metric(reaction(J), MetricTransform(np.diag(diag)))
    jac = q.dh_dPhi(np.zeros((2, 4)), np.zeros((2, 1, 4)), grid.coords, 0.0)[:, :, 0]
    assert np.allclose(np.sort_complex(np.linalg.eigvals(jac)), np.sort_complex(np.linalg.eigvals(J)), atol=1e-8)


def test_forward_backward_round_trip():
    th = MetricTransform([[2.0, 1.0], [0.0, 3.0]])
    v = np.random.default_rng(1).normal(size=(2, 7))
    assert np.allclose(th.backward(th.forward(v)), v)
    assert np.allclose(th.metric, th.theta.T @ th.theta)
