"""End-to-end acceptance checks at the stated tolerances.

Each test carries an ``acceptance`` marker; the conftest hook prints one
PASS/FAIL line per label at the end of the run.
"""
import filecmp
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import inflow_everywhere, random_velocity, velocity_problem
from contraction import Grid, combined_certificate, fit_rate, perturbation_experiment
from contraction import dynamics as dyn
from contraction.cli import main
from contraction.galerkin import galerkin_run, make_basis, project_field
from contraction.grid import diffusion_matrix, min_symmetric_eigenvalue, upwind_psd_check
from contraction.hamilton import (
    CharState,
    CharTrajectory,
    Hamiltonian,
    convexity_monitor,
    integrate_characteristic,
    lie_condition_p,
    lie_condition_x,
)
from contraction.optimal import (
    ObserverProblem,
    hjb_solve,
    kalman_bucy,
    linear_control_problem,
    lq_oracle,
    observer_hamiltonian,
    run_observer,
    synthesize_hamiltonian_control,
)
from contraction.scenarios import load_scenario, metric_error_norm, saturated_diffusion_jacobian

TRANSPORT = "transport rate on a compressing flow"
HEAT = "heat equation against the Fourier bound"
PSD = "upwind convection PSD property"
RICCATI = "HJB characteristics against the Riccati oracle"
LIE = "Lie chain order against brute-force rank"
OBSERVER = "optimal observer against Kalman-Bucy"
CONVEX = "convexity preservation"
GALERKIN = "Galerkin contraction preservation"
WAFER = "wafer disk rate and saturated diffusion"
REACTOR = "reactor observer convergence"
DETERMINISM = "suite determinism"


# ---------------------------------------------------------------------------


@pytest.mark.acceptance(TRANSPORT)
def test_compressing_transport_rate_and_runtime():
    start = time.perf_counter()
    sc = load_scenario("transport_compress", {"nodes": 201, "seed": 11})
    series = perturbation_experiment(sc.problem, sc.grid, sc.bounds, sc.inits[0], sc.inits[1], 0.0, sc.t1)
    fit = fit_rate(series)
    elapsed = time.perf_counter() - start
    assert 0.45 <= fit.rate <= 0.55
    assert elapsed < 5.0
    cert = combined_certificate(sc.problem, sc.grid, sc.bounds, sc.samples, sc.t_samples)
    assert cert.rate == pytest.approx(0.5, abs=1e-9)


@pytest.mark.acceptance(HEAT)
def test_heat_rate_matches_fourier_bound():
    sc = load_scenario("heat", {"nodes": 201})
    series = perturbation_experiment(sc.problem, sc.grid, sc.bounds, sc.inits[0], sc.inits[1], 0.0, sc.t1)
    assert 0.95 <= fit_rate(series).rate <= 1.05
    cert = combined_certificate(sc.problem, sc.grid, sc.bounds, sc.samples, sc.t_samples)
    assert cert.diffusion_bound == pytest.approx(1.0)


@pytest.mark.acceptance(HEAT)
def test_discrete_dirichlet_laplacian_smallest_eigenvalue():
    sc = load_scenario("heat", {"nodes": 201})
    op = diffusion_matrix(sc.problem, sc.grid, sc.bounds, 0.0)
    lam = min_symmetric_eigenvalue(-op.matrix)
    assert abs(lam - 1.0) < 0.01


@pytest.mark.acceptance(PSD)
def test_upwind_psd_on_500_random_velocity_fields():
    rng = np.random.default_rng(2024)
    worst = np.inf
    for case in range(500):
        dims = 1 + case % 2
        n = tuple(int(v) for v in rng.integers(16, 129, size=dims))
        grid = Grid(tuple(rng.uniform(0.5, 3.0, size=dims)), n)
        vel = random_velocity(rng, grid)
        res = upwind_psd_check(velocity_problem(vel), grid, inflow_everywhere(grid), 0.0,
                               state=np.zeros((1, grid.size)))
        worst = min(worst, res.min_eig)
        assert res.min_eig >= -1e-10, f"case {case}: {res.min_eig}"
    assert np.isfinite(worst)


@pytest.mark.acceptance(RICCATI)
@pytest.mark.parametrize("system", ["scalar", "double_integrator"])
def test_hjb_hessian_matches_riccati_oracle(system):
    sc = load_scenario("lq_control", {"system": system})
    e = sc.extras
    sol = hjb_solve(e["control"], e["x0"], sc.dt)[0]
    orc = lq_oracle(e["A"], e["B"], e["R"], e["Q"], e["control"].t_f, e["control"].P_f, times=sol.times)
    assert np.max(np.abs(sol.H - orc.P)) < 1e-6


@pytest.mark.acceptance(RICCATI)
def test_backward_riccati_fixed_point_is_one():
    cp = linear_control_problem([[0.0]], [[1.0]], [[1.0]], [[1.0]], 20.0)
    sol = hjb_solve(cp, [1.0], 0.01)[0]
    assert abs(sol.H[0, 0, 0] - 1.0) < 1e-8


def _chain_index(A, B, j_max=3):
    """Smallest j with rank [B, AB, ..., A^{j-1} B] full, or None."""
    m = A.shape[0]
    blocks = [B]
    for j in range(1, j_max + 1):
        if np.linalg.matrix_rank(np.hstack(blocks)) == m:
            return j
        blocks.append(np.linalg.matrix_power(A, j) @ B)
    return None


LTI_BATTERY = [
    ([[0.0]], [[1.0]], [[1.0]]),
    ([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0], [0.0, 0.0]]),
    ([[0, 1, 0], [0, 0, 1], [0, 0, 0]], [[0], [0], [1]], np.diag([1.0, 0.0, 0.0])),
    ([[-1.0, 0.0], [0.0, -2.0]], [[1.0], [0.0]], [[0.0, 0.0], [0.0, 1.0]]),
    ([[0.0, 1.0], [-1.0, 0.0]], np.eye(2), np.eye(2)),
    ([[1, 1, 0], [0, 1, 0], [0, 0, 2]], [[0], [1], [1]], np.diag([0.0, 0.0, 1.0])),
]


@pytest.mark.acceptance(LIE)
@pytest.mark.parametrize("A,B,R", LTI_BATTERY)
def test_lie_order_equals_grammian_rank_order(A, B, R):
    A, B, R = (np.array(v, dtype=float) for v in (A, B, R))
    m = A.shape[0]
    cp = linear_control_problem(A, B, R, np.eye(B.shape[1]), t_f=1.0, P_f=np.eye(m))
    ham = synthesize_hamiltonian_control(cp).ham
    traj = integrate_characteristic(ham, CharState(np.ones(m), np.ones(m), np.eye(m), 1.0), 0.0, 0.05,
                                    "backward")
    # p chain follows the input directions, x chain the weighted state directions
    assert lie_condition_p(ham, traj, 3).order == _chain_index(A, B)
    assert lie_condition_x(ham, traj, 3).order == _chain_index(A.T, R)


@pytest.mark.acceptance(OBSERVER)
@pytest.mark.parametrize("system", ["scalar", "two_state"])
def test_observer_matches_kalman_bucy(system):
    sc = load_scenario("lq_estimation", {"system": system})
    e, op = sc.extras, sc.extras["observer"]
    run = run_observer(op, 0.0, sc.t1, sc.dt)
    _, xk, Pk = kalman_bucy(e["A"], e["C"], e["G"], e["R"], e["Q"], op.x0_hat, np.linalg.inv(op.Pi0),
                            op.y_m, 0.0, sc.t1, sc.dt)
    assert np.max(np.abs(run.x_hat - xk)) < 1e-6
    assert np.max(np.abs(run.covariance - Pk)) < 1e-6


@pytest.mark.acceptance(OBSERVER)
def test_information_matrix_without_measurements():
    q, pi0 = 2.0, 3.0
    op = ObserverProblem(
        f=lambda x, t: 0 * x, df_dx=lambda x, t: np.zeros((1, 1)), G=1.0,
        y=lambda x, t: 0 * x, dy_dx=lambda x, t: np.zeros((1, 1)), y_m=lambda t: np.zeros(1),
        R=[[0.0]], Q=[[q]], Pi0=[[pi0]], x0_hat=[0.3],
        d2y_dx2=lambda x, t: np.zeros((1, 1, 1)),
    )
    run = run_observer(op, 0.0, 5.0, 0.01)
    closed = pi0 / (1 + pi0 * run.times / q)
    assert np.max(np.abs(run.Pi[:, 0, 0] - closed)) < 1e-8
    assert np.allclose(run.x_hat, 0.3)


def _suite_trajectories():
    """(Hamiltonian, CharTrajectory) pairs from the control and estimation scenarios."""
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for name, params in [("lq_control", {"system": "scalar"}),
                             ("lq_control", {"system": "double_integrator"}),
                             ("pendulum_control", {})]:
            sc = load_scenario(name, params)
            sol = hjb_solve(sc.extras["control"], sc.extras["x0"], sc.dt)[0]
            out.append((synthesize_hamiltonian_control(sc.extras["control"]).ham, sol.backward))
    for system in ("scalar", "two_state"):
        sc = load_scenario("lq_estimation", {"system": system})
        op = sc.extras["observer"]
        run = run_observer(op, 0.0, sc.t1, sc.dt)
        states = tuple(CharState(x, np.zeros_like(x), P, t)
                       for t, x, P in zip(run.times[::50], run.x_hat[::50], run.Pi[::50]))
        out.append((observer_hamiltonian(op), CharTrajectory(states, "forward")))
    return out


@pytest.mark.acceptance(CONVEX)
def test_hessian_stays_convex_where_lie_conditions_hold():
    checked = 0
    for ham, traj in _suite_trajectories():
        lx = lie_condition_x(ham, traj, 3)
        lp = lie_condition_p(ham, traj, 3)
        if lx.order is None or lp.order is None:
            continue
        checked += 1
        mins = np.array([np.linalg.eigvalsh(H)[0] for H in traj.H])
        assert mins.min() >= -1e-8
    assert checked == 5


@pytest.mark.acceptance(CONVEX)
def test_free_particle_hessian_closed_form():
    ham = Hamiltonian.from_function(lambda p, x, t: 0.5 * p @ p, lambda p, x, t: np.zeros_like(x),
                                    lambda p, x, t: p)
    rep = convexity_monitor(ham, CharState([0.0], [1.0], [[1.0]], 0.0), 5.0, 0.01)
    t = rep.times
    assert np.max(np.abs(rep.trajectory.H[:, 0, 0] - 1 / (1 + t))) < 1e-8
    assert rep.convex


@pytest.mark.acceptance(GALERKIN)
@pytest.mark.parametrize("name", ["heat", "transport_compress"])
@pytest.mark.parametrize("size", [1, 2, 4, 8])
def test_galerkin_coefficients_contract(name, size):
    sc = load_scenario(name, {})
    cert = combined_certificate(sc.problem, sc.grid, sc.bounds, sc.samples, sc.t_samples)
    basis = make_basis(sc.basis["family"], sc.grid, size)
    a0, b0 = (project_field(basis, v) for v in sc.inits[:2])
    ra = galerkin_run(sc.problem, basis.with_coeffs(a0), 0.0, sc.t1, 0.01, sc.bounds)
    rb = galerkin_run(sc.problem, basis.with_coeffs(b0), 0.0, sc.t1, 0.01, sc.bounds)
    d2 = ra.distance(rb)
    assert np.all(np.diff(d2) <= 0)
    fit = fit_rate(dyn.DecaySeries(ra.times, d2))
    assert fit.rate >= 0.9 * cert.rate


@pytest.mark.acceptance(WAFER)
def test_wafer_open_loop_observer_rate():
    sc = load_scenario("wafer_disk", {"h": 1.0, "phi_min": 0.5})
    assert min(float(np.min(v)) for v in sc.inits) >= 0.5
    cert = combined_certificate(sc.problem, sc.grid, sc.bounds, sc.samples, sc.t_samples)
    assert cert.rate == pytest.approx(0.5)
    series = perturbation_experiment(sc.problem, sc.grid, sc.bounds, sc.inits[0], sc.inits[1], 0.0, sc.t1)
    assert fit_rate(series).rate >= 0.9 * 0.5


@pytest.mark.acceptance(WAFER)
def test_saturated_diffusion_jacobian_is_psd():
    rng = np.random.default_rng(5)
    for alpha in (0.5, 1.0, 4.0):
        grads = rng.normal(scale=3.0, size=(2, 100))
        jac = saturated_diffusion_jacobian(grads, alpha)
        eigs = np.linalg.eigvalsh(np.moveaxis(jac, -1, 0))
        # along the gradient d(g* r)/dr = sech^2(alpha r); across it g* itself
        r = np.linalg.norm(grads, axis=0)
        along = 1 / np.cosh(alpha * r) ** 2
        across = np.tanh(alpha * r) / (alpha * r)
        expected = np.sort(np.column_stack([along, across]), axis=1)
        assert np.allclose(eigs, expected, rtol=1e-10, atol=1e-14)
        assert eigs.min() >= -1e-14


@pytest.mark.acceptance(REACTOR)
def test_reactor_observer_error_decays():
    start = time.perf_counter()
    sc = load_scenario("reactor_observer", {})
    assert sc.grid.n_nodes == (50, 50)
    e = sc.extras
    cert = combined_certificate(sc.certified_problem(), sc.grid, sc.bounds, sc.certified_samples(),
                                sc.t_samples)
    assert cert.contracting
    dt = dyn.stable_dt(e["coupled"], sc.grid, e["coupled_bounds"], e["coupled_init"], 0.0)
    traj = dyn.run(e["coupled"], sc.grid, e["coupled_bounds"], e["coupled_init"], 0.0, sc.t1, dt, every=20)
    err = metric_error_norm(sc.grid, traj.snapshots[:, 2:], traj.snapshots[:, :2], e["theta"])
    settled = traj.times >= 0.1 * sc.t1
    assert np.all(np.diff(err[settled]) <= 0)
    assert err[-1] < 1e-3 * err[0]
    assert time.perf_counter() - start < 120


@pytest.mark.acceptance(DETERMINISM)
def test_suite_is_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["suite", "--out", str(a), "--seed", "7"]) == 0
    assert main(["suite", "--out", str(b), "--seed", "7"]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(files) > 10
    assert sorted(p.relative_to(b) for p in b.rglob("*.csv")) == files
    match, mismatch, errors = filecmp.cmpfiles(a, b, [str(f) for f in files], shallow=False)
    assert not mismatch and not errors
