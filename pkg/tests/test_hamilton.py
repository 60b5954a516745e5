import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contraction.errors import DerivativeMismatch, InsufficientTrajectory, SingularHessian
from contraction.hamilton import (
    CharState,
    CharTrajectory,
    Hamiltonian,
    characteristic_step,
    convexity_monitor,
    integrate_characteristic,
    integrate_inverse,
    inverse_riccati_step,
    lie_chain,
    lie_condition_p,
    lie_condition_x,
)


def quadratic(Hxx, Hxp, Hpp, linear_x=None, linear_p=None):
    """``h = 1/2 x'Hxx x + x'Hxp p + 1/2 p'Hpp p + gx'x + gp'p`` with exact derivatives."""
    Hxx, Hxp, Hpp = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (Hxx, Hxp, Hpp))
    m = Hxx.shape[0]
    gx = np.zeros(m) if linear_x is None else np.asarray(linear_x, float)
    gp = np.zeros(m) if linear_p is None else np.asarray(linear_p, float)
    return Hamiltonian(
        h=lambda p, x, t: 0.5 * x @ Hxx @ x + x @ Hxp @ p + 0.5 * p @ Hpp @ p + gx @ x + gp @ p,
        dh_dx=lambda p, x, t: Hxx @ x + Hxp @ p + gx,
        dh_dp=lambda p, x, t: Hxp.T @ x + Hpp @ p + gp,
        d2h_dx2=lambda p, x, t: Hxx,
        d2h_dxdp=lambda p, x, t: Hxp,
        d2h_dp2=lambda p, x, t: Hpp,
    )


def lq(a=0.0, b=1.0, q=1.0, r=1.0):
    """Scalar ``h = q x^2 / 2 + a x p - b^2 p^2 / (2 r)``."""
    return quadratic([[q]], [[a]], [[-b * b / r]])


FREE = quadratic([[0.0]], [[0.0]], [[1.0]])


def test_free_particle_closed_form():
    traj = integrate_characteristic(FREE, CharState([0.0], [2.0], [[1.0]], 0.0), 3.0, 0.01)
    t = traj.times
    assert np.allclose(traj.x[:, 0], 2.0 * t)
    assert np.allclose(traj.p[:, 0], 2.0)
    assert np.max(np.abs(traj.H[:, 0, 0] - 1 / (1 + t))) < 1e-9


def test_linear_hamiltonian_translates():
    ham = quadratic([[0.0]], [[0.0]], [[0.0]], linear_p=[0.7])
    s = characteristic_step(ham, CharState([1.0], [0.0], [[2.0]], 0.0), 0.5)
    assert s.x[0] == pytest.approx(1.35)
    assert s.H[0, 0] == pytest.approx(2.0)
    assert s.t == pytest.approx(0.5)


def test_backward_lq_reaches_riccati_root():
    traj = integrate_characteristic(lq(), CharState([1.0], [0.0], [[0.5]], 20.0), 0.0, 0.01, "backward")
    assert traj.direction == "backward"
    assert traj.states[-1].t == 0.0
    assert traj.states[-1].H[0, 0] == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("a,b,q,r", [(0.5, 1.0, 2.0, 1.0), (-1.0, 2.0, 1.0, 3.0)])
def test_backward_lq_matches_algebraic_root(a, b, q, r):
    traj = integrate_characteristic(lq(a, b, q, r), CharState([0.0], [0.0], [[0.0]], 30.0), 0.0, 0.01,
                                    "backward")
    # q - H^2 b^2 / r + 2 a H = 0, positive root
    root = (a + np.sqrt(a * a + q * b * b / r)) * r / (b * b)
    assert traj.states[-1].H[0, 0] == pytest.approx(root, rel=1e-9)


def test_wrong_direction_rejected():
    with pytest.raises(ValueError):
        integrate_characteristic(FREE, CharState([0.0], [0.0], [[1.0]], 1.0), 0.0, 0.1, "forward")
    with pytest.raises(ValueError):
        characteristic_step(FREE, CharState([0.0], [0.0], [[1.0]]), 0.1, "sideways")


def test_inverse_free_particle():
    traj = integrate_inverse(FREE, CharState([0.0], [1.0], [[1.0]], 0.0), 2.0, 0.01)
    assert np.allclose(traj.H[:, 0, 0], 1 + traj.times)


def test_inverse_constant_without_curvature():
    ham = quadratic([[0.0]], [[0.0]], [[0.0]], linear_p=[1.0])
    s = inverse_riccati_step(ham, CharState([0.0], [0.0], [[3.0]]), 0.1)
    assert s.H[0, 0] == pytest.approx(3.0)


def test_inverse_singular_rejected():
    with pytest.raises(SingularHessian):
        inverse_riccati_step(FREE, CharState([0.0, 0.0], [0.0, 0.0], np.diag([1.0, 0.0])), 0.1)
    with pytest.raises(SingularHessian):
        CharState([0.0], [0.0], [[0.0]]).inverted()


@settings(max_examples=20, deadline=None)
@given(st.floats(-1, 1), st.floats(0.3, 2), st.floats(0.1, 2), st.floats(0.5, 3), st.floats(0.2, 3))
def test_hessian_and_inverse_stay_mutual_inverses(a, b, q, r, h0):
    ham = lq(a, b, q, r)
    # the controller Riccati equation is well posed backward in time
    s = CharState([1.0], [0.5], [[h0]], 5.0)
    fwd = integrate_characteristic(ham, s, 0.0, 0.01, "backward")
    inv = integrate_inverse(ham, s.inverted(), 0.0, 0.01, "backward")
    prod = fwd.H[:, 0, 0] * inv.H[:, 0, 0]
    assert np.max(np.abs(prod - 1)) < 1e-6


def test_matrix_inverse_consistency_two_states():
    ham = quadratic(np.diag([1.0, 0.5]), [[0.0, 1.0], [0.0, 0.0]], -np.diag([0.0, 1.0]))
    s = CharState([1.0, 0.0], [0.0, 0.0], [[2.0, 0.3], [0.3, 1.0]], 2.0)
    fwd = integrate_characteristic(ham, s, 0.0, 0.005, "backward")
    inv = integrate_inverse(ham, s.inverted(), 0.0, 0.005, "backward")
    err = np.max(np.abs(fwd.H @ inv.H - np.eye(2)), axis=(1, 2))
    assert err.max() < 1e-6


# ---------------------------------------------------------------------------
# finite-difference Hamiltonians


def test_finite_difference_derivatives_match_analytic():
    exact = quadratic([[2.0, 0.5], [0.5, 1.0]], [[0.3, -1.0], [0.0, 0.7]], [[-1.0, 0.2], [0.2, -0.5]])
    fd = Hamiltonian.from_function(exact.h)
    p, x = np.array([0.4, -0.3]), np.array([1.2, 0.8])
    for a, b in zip(exact.second(p, x, 0.0), fd.second(p, x, 0.0)):
        assert np.allclose(a, b, atol=1e-4)
    fd.check(p, x, tol=1e-4)


def test_inconsistent_gradients_detected():
    good = lq(a=0.5)
    bad = Hamiltonian(good.h, lambda p, x, t: 2 * good.dh_dx(p, x, t), good.dh_dp,
                      good.d2h_dx2, good.d2h_dxdp, good.d2h_dp2)
    with pytest.raises(DerivativeMismatch):
        bad.check([0.5], [1.0])


# ---------------------------------------------------------------------------
# Lie conditions


def _backward(ham, m, t_f=1.0, dt=0.05):
    return integrate_characteristic(ham, CharState(np.ones(m), np.ones(m), np.eye(m), t_f), 0.0, dt, "backward")


def test_lq_orders_one():
    ham = lq(q=2.0, r=0.5)
    traj = _backward(ham, 1)
    assert lie_condition_x(ham, traj, 3).order == 1
    assert lie_condition_p(ham, traj, 3).order == 1


def test_no_curvature_never_passes():
    ham = quadratic([[0.0]], [[0.0]], [[0.0]])
    traj = _backward(ham, 1)
    assert lie_condition_x(ham, traj, 3).order is None
    assert lie_condition_p(ham, traj, 3).order is None


def test_coupled_state_fills_rank_at_order_two():
    A = np.array([[0.0, 0.0], [1.0, 0.0]])
    ham = quadratic(np.diag([0.0, 1.0]), A.T, -np.diag([1.0, 0.0]))
    res_x = lie_condition_x(ham, _backward(ham, 2), 3)
    res_p = lie_condition_p(ham, _backward(ham, 2), 3)
    assert res_x.order == 2
    assert res_x.kernel_dims == (2, 1, 0)
    assert res_p.order == 2


def test_sign_condition_depends_on_direction():
    ham = lq(q=1.0)
    fwd = integrate_characteristic(ham, CharState([1.0], [1.0], [[1.0]], 0.0), 1.0, 0.05)
    res = lie_condition_x(ham, fwd, 3)
    # -h_xx = -q is negative, which passes only backward
    assert not res.sign_ok
    assert res.order is None


def test_short_trajectory_rejected():
    ham = lq()
    traj = integrate_characteristic(ham, CharState([1.0], [1.0], [[1.0]], 0.0), 0.1, 0.05)
    assert len(traj.states) == 3
    lie_chain(ham, traj, 2)
    with pytest.raises(InsufficientTrajectory):
        lie_chain(ham, traj, 3)
    with pytest.raises(ValueError):
        lie_chain(ham, traj, 4)


def test_chain_time_derivative_of_varying_curvature():
    ham = Hamiltonian(
        lambda p, x, t: 0.5 * t**2 * x @ x, lambda p, x, t: t**2 * x, lambda p, x, t: 0 * p,
        lambda p, x, t: np.array([[t**2]]), lambda p, x, t: np.zeros((1, 1)), lambda p, x, t: np.zeros((1, 1)),
    )
    states = tuple(CharState([0.0], [0.0], [[1.0]], t) for t in np.linspace(0, 1, 11))
    chain = lie_chain(ham, CharTrajectory(states), 2, "x")
    t = np.linspace(0, 1, 11)
    # L1 = -d/dt(-t^2) = 2t
    assert np.allclose(chain[1, :, 0, 0], 2 * t, atol=1e-10)


# ---------------------------------------------------------------------------
# convexity


def test_lq_backward_stays_convex():
    rep = convexity_monitor(lq(q=1.0, r=1.0), CharState([1.0], [0.0], [[1.0]], 5.0), 0.0, 0.01, "backward")
    assert rep.convex
    assert rep.min_eigs.min() >= 1.0 - 1e-12


def test_semidefinite_mode_flagged():
    rep = convexity_monitor(quadratic(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2)),
                            CharState([0.0, 0.0], [0.0, 0.0], np.diag([1.0, 0.0]), 0.0), 2.0, 0.01)
    assert rep.semidefinite
    assert rep.convex
    assert np.allclose(rep.min_eigs, 0.0)


def test_convexity_loss_located():
    # forward with h_xx = 1: dH/dt = -1 - H^2 (h_pp = 1) crosses zero at t = pi/4
    ham = quadratic([[1.0]], [[0.0]], [[1.0]])
    rep = convexity_monitor(ham, CharState([0.0], [0.0], [[1.0]], 0.0), (0.0, 2.0), 0.001)
    assert rep.lost_at == pytest.approx(np.pi / 4, abs=2e-3)


def test_trajectory_interpolation_and_csv(tmp_path):
    traj = integrate_characteristic(FREE, CharState([0.0], [1.0], [[1.0]], 0.0), 1.0, 0.5)
    mid = traj.at(0.25)
    assert mid.x[0] == pytest.approx(0.25)
    assert traj.at(5.0).x[0] == pytest.approx(1.0)
    traj.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "t,x0,p0,eigH0"
