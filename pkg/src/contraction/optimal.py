"""Optimal control and estimation along Hamiltonian characteristics.

Controller: running cost ``l = 1/2 (x - x_d)^T R (x - x_d) + 1/2 (u - u_d)^T Q (u - u_d)``
(``R`` weighs the state, ``Q`` the control), Hamiltonian ``h = l + p.f``
minimised over ``u``, value function integrated backward from ``t_f``.

Observer: the same machinery run forward with ``h = -l + p.f`` where ``l``
penalises the measurement residual (weight ``R``) and the disturbance
(weight ``Q``); the estimate sits where the gradient of the cost vanishes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .errors import ConvexityLost, NoClosedFormControl, NonFiniteState, SingularInformation
from .hamilton import (
    CharState,
    Hamiltonian,
    _fd_jac,
    convexity_monitor,
)
from .io import write_csv

__all__ = [
    "ControlProblem",
    "ControlHamiltonian",
    "synthesize_hamiltonian_control",
    "HjbSolution",
    "hjb_solve",
    "ClosedLoopReport",
    "closed_loop_contraction_check",
    "ObserverProblem",
    "ObserverEstimate",
    "ObserverRun",
    "observer_hamiltonian",
    "observer_step",
    "run_observer",
    "kalman_bucy",
    "LqOracle",
    "lq_oracle",
    "linear_control_problem",
    "sample_and_hold",
]


def _as_fn(value):
    """Wrap a constant (or ``None``) as a function of time."""
    if callable(value):
        return value
    const = None if value is None else np.atleast_1d(np.asarray(value, dtype=float))
    return lambda t: const


def _mat_fn(value):
    if callable(value):
        return lambda t: np.atleast_2d(np.asarray(value(t), dtype=float))
    const = np.atleast_2d(np.asarray(value, dtype=float))
    return lambda t: const


# ---------------------------------------------------------------------------
# controller


@dataclass(frozen=True)
class ControlProblem:
    """Plant ``dx/dt = f(x, u, t)`` with the built-in quadratic cost.

    ``R`` (state) and ``Q`` (control) are symmetric positive definite, or
    semidefinite for ``R``.  The terminal cost is
    ``1/2 (x - x_target)^T P_f (x - x_target)``.  ``linear`` marks
    ``f = A(t) x + B(t) u`` so that second derivatives are exact.
    """

    f: Callable
    df_dx: Callable
    df_du: Callable
    R: np.ndarray
    Q: np.ndarray
    t_f: float
    P_f: Optional[np.ndarray] = None
    x_target: Optional[np.ndarray] = None
    x_d: object = None
    u_d: object = None
    linear: bool = False
    name: str = ""

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        for name, mat in (("R", R), ("Q", Q)):
            if np.max(np.abs(mat - mat.T)) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q)[0] <= 0:
            raise ValueError("control weight Q must be positive definite")
        if np.linalg.eigvalsh(R)[0] < -1e-12:
            raise ValueError("state weight R must be positive semidefinite")
        m, k = R.shape[0], Q.shape[0]
        P_f = np.zeros((m, m)) if self.P_f is None else np.atleast_2d(np.asarray(self.P_f, float))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P_f", P_f)
        xt = np.zeros(m) if self.x_target is None else np.atleast_1d(np.asarray(self.x_target, float))
        object.__setattr__(self, "x_target", xt)
        xd, ud = self.x_d, self.u_d
        object.__setattr__(self, "x_d", _as_fn(np.zeros(m) if xd is None else xd))
        object.__setattr__(self, "u_d", _as_fn(np.zeros(k) if ud is None else ud))

    @property
    def n_state(self):
        return self.R.shape[0]

    @property
    def n_control(self):
        return self.Q.shape[0]

    def cost(self, x, u, t):
        dx = x - self.x_d(t)
        du = u - self.u_d(t)
        return 0.5 * dx @ self.R @ dx + 0.5 * du @ self.Q @ du

    def terminal_cost(self, x):
        dx = x - self.x_target
        return 0.5 * dx @ self.P_f @ dx

    def terminal_gradient(self, x):
        return self.P_f @ (x - self.x_target)


def linear_control_problem(A, B, R, Q, t_f, P_f=None, **kw) -> ControlProblem:
    """``f = A(t) x + B(t) u``; ``A`` and ``B`` may be constant or functions of ``t``."""
    A_t, B_t = _mat_fn(A), _mat_fn(B)
    return ControlProblem(
        f=lambda x, u, t: A_t(t) @ x + B_t(t) @ u,
        df_dx=lambda x, u, t: A_t(t),
        df_du=lambda x, u, t: B_t(t),
        R=R, Q=Q, t_f=t_f, P_f=P_f, linear=True, **kw,
    )


@dataclass(frozen=True)
class ControlHamiltonian:
    ham: Hamiltonian
    u_star: Callable
    problem: ControlProblem

    def h_of_u(self, p, x, u, t):
        """Unreduced ``l(x, u) + p.f(x, u)``."""
        cp = self.problem
        return cp.cost(x, u, t) + p @ cp.f(x, u, t)


def _check_affine(cp, rng, probes=5):
    m, k = cp.n_state, cp.n_control
    for _ in range(probes):
        x = rng.uniform(-1, 1, m)
        u = rng.uniform(-1, 1, k)
        t = rng.uniform(0, cp.t_f) if cp.t_f > 0 else 0.0
        u0 = np.zeros(k)
        lin = cp.f(x, u0, t) + np.asarray(cp.df_du(x, u0, t)) @ u
        if np.max(np.abs(cp.f(x, u, t) - lin)) > 1e-8 * max(1.0, np.max(np.abs(lin))):
            raise NoClosedFormControl("plant is not affine in the control; no closed-form minimiser")


def synthesize_hamiltonian_control(cp: ControlProblem, seed=0) -> ControlHamiltonian:
    """Reduced Hamiltonian ``h(p, x, t) = min_u l + p.f``.

    Interior stationarity ``Q (u - u_d) + B^T p = 0`` with ``B = df/du``
    gives ``u* = u_d - Q^-1 B^T p``.  By the envelope theorem
    ``h_p = f(x, u*)`` and ``h_x = R (x - x_d) + (df/dx)^T p``.
    """
    _check_affine(cp, np.random.default_rng(seed))
    Qi = np.linalg.inv(cp.Q)

    def u_star(p, x, t):
        B = np.atleast_2d(np.asarray(cp.df_du(x, cp.u_d(t), t), dtype=float))
        return cp.u_d(t) - Qi @ B.T @ p

    def h(p, x, t):
        u = u_star(p, x, t)
        return cp.cost(x, u, t) + p @ cp.f(x, u, t)

    def dh_dp(p, x, t):
        return np.asarray(cp.f(x, u_star(p, x, t), t), dtype=float)

    def dh_dx(p, x, t):
        u = u_star(p, x, t)
        A = np.atleast_2d(np.asarray(cp.df_dx(x, u, t), dtype=float))
        return cp.R @ (x - cp.x_d(t)) + A.T @ p

    if cp.linear:
        def d2h_dx2(p, x, t):
            return cp.R

        def d2h_dxdp(p, x, t):
            return np.atleast_2d(np.asarray(cp.df_dx(x, cp.u_d(t), t), dtype=float)).T

        def d2h_dp2(p, x, t):
            B = np.atleast_2d(np.asarray(cp.df_du(x, cp.u_d(t), t), dtype=float))
            return -B @ Qi @ B.T

        ham = Hamiltonian(h, dh_dx, dh_dp, d2h_dx2, d2h_dxdp, d2h_dp2, cp.name)
    else:
        ham = Hamiltonian.from_function(h, dh_dx, dh_dp, cp.name)
    return ControlHamiltonian(ham, u_star, cp)


@dataclass(frozen=True)
class HjbSolution:
    x0: np.ndarray
    times: np.ndarray
    x: np.ndarray  # (T, m) forward replay
    u: np.ndarray  # (T, k)
    p: np.ndarray  # (T, m)
    H: np.ndarray  # (T, m, m)
    gain: np.ndarray  # (T, k, m) feedback gain Q^-1 B^T H
    cost: float
    convexity: object
    iterations: int
    backward: object = None

    @property
    def convexity_lost_at(self):
        return self.convexity.lost_at

    def to_csv(self, path):
        m, k = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x{i}" for i in range(m)] + [f"u{i}" for i in range(k)]
        header += [f"H{i}{j}" for i in range(m) for j in range(m)]
        header += [f"gain{i}{j}" for i in range(k) for j in range(m)]
        rows = [
            [t, *xx, *uu, *HH.ravel(), *KK.ravel()]
            for t, xx, uu, HH, KK in zip(self.times, self.x, self.u, self.H, self.gain)
        ]
        return write_csv(path, header, rows)


def _replay(ch, bwd, x0, times):
    """Forward RK4 pass under ``p = p_c + H (x - x_c)`` interpolated from ``bwd``."""
    cp = ch.problem

    def field_at(x, t):
        xc, pc, H = bwd.interp(t)
        return pc + H @ (x - xc), H

    def xdot(x, t):
        p, _ = field_at(x, t)
        return np.asarray(cp.f(x, ch.u_star(p, x, t), t), dtype=float)

    xs = [np.asarray(x0, dtype=float)]
    for a, b in zip(times[:-1], times[1:]):
        h = b - a
        x = xs[-1]
        k1 = xdot(x, a)
        k2 = xdot(x + h / 2 * k1, a + h / 2)
        k3 = xdot(x + h / 2 * k2, a + h / 2)
        k4 = xdot(x + h * k3, b)
        xn = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(xn)):
            raise NonFiniteState(f"closed-loop state escaped at t={b:.6g}")
        xs.append(xn)
    xs = np.array(xs)
    ps, Hs, us = [], [], []
    for x, t in zip(xs, times):
        p, H = field_at(x, t)
        ps.append(p)
        Hs.append(H)
        us.append(ch.u_star(p, x, t))
    return xs, np.array(ps), np.array(Hs), np.array(us)


def _realised_cost(cp, times, x, u):
    run = np.array([cp.cost(xx, uu, t) for xx, uu, t in zip(x, u, times)])
    return float(np.trapezoid(run, times) + cp.terminal_cost(x[-1]))


def hjb_solve(cp: ControlProblem, x0_set, dt, t0=0.0, tol=1e-10, max_iter=50):
    """Characteristic solution of the HJB problem for each initial state.

    For every ``x0`` a characteristic is integrated backward from ``t_f``
    (``p = grad phi_f``, ``H = P_f``) starting at a guess for ``x(t_f)``.
    The plant is then replayed forward under the affine feedback the
    characteristic defines, and the guess is replaced by the replayed end
    point until it stops moving.
    """
    ch = synthesize_hamiltonian_control(cp)
    out = []
    for x0 in np.atleast_2d(np.asarray(x0_set, dtype=float)):
        xf = x0.copy()
        iterations = 0
        for iterations in range(1, max_iter + 1):
            s_f = CharState(xf, cp.terminal_gradient(xf), cp.P_f, cp.t_f)
            report = convexity_monitor(ch.ham, s_f, t0, dt, "backward")
            bwd = report.trajectory
            times = bwd.times[::-1]
            xs, ps, Hs, us = _replay(ch, bwd, x0, times)
            moved = float(np.max(np.abs(xs[-1] - xf)))
            xf = xs[-1]
            if moved <= tol * max(1.0, float(np.max(np.abs(xf)))):
                break
        if report.lost_at is not None:
            warnings.warn(f"value Hessian lost convexity at t={report.lost_at:.6g}", ConvexityLost)
        Qi = np.linalg.inv(cp.Q)
        gains = np.array([
            Qi @ np.atleast_2d(np.asarray(cp.df_du(x, cp.u_d(t), t), float)).T @ H
            for x, t, H in zip(xs, times, Hs)
        ])
        cost = _realised_cost(cp, times, xs, us)
        out.append(HjbSolution(x0, times, xs, us, ps, Hs, gains, cost, report, iterations, bwd))
    return out


@dataclass(frozen=True)
class ClosedLoopReport:
    times: np.ndarray
    min_eig_W: np.ndarray
    min_eig_H: np.ndarray
    rate: float
    classification: str
    notes: tuple = field(default_factory=tuple)


def closed_loop_contraction_check(cp, solved, tol=1e-10) -> ClosedLoopReport:
    """Spectrum of ``W = h_xx - H h_pp H`` along a solved trajectory.

    Along closed-loop trajectories ``d/dt (dx^T H dx) = -dx^T W dx``, so
    ``W > 0`` with ``H > 0`` is contraction in the metric ``H``; the
    reported norm rate is half the smallest generalised eigenvalue of
    ``(W, H)`` over the trajectory.
    """
    ch = synthesize_hamiltonian_control(cp)
    w_min, h_min, mu = [], [], []
    for t, x, p, H in zip(solved.times, solved.x, solved.p, solved.H):
        hxx, _, hpp = ch.ham.second(p, x, t)
        W = hxx - H @ hpp @ H
        W = 0.5 * (W + W.T)
        w_min.append(np.linalg.eigvalsh(W)[0])
        eh = np.linalg.eigvalsh(H)
        h_min.append(eh[0])
        if eh[0] > tol:
            mu.append(scipy.linalg.eigh(W, H, eigvals_only=True)[0])
    w_min, h_min = np.array(w_min), np.array(h_min)
    notes = []
    if np.min(h_min) <= tol:
        cls, rate = "inconclusive", 0.0
        notes.append("value Hessian is not positive definite along the trajectory")
    elif np.min(w_min) > tol:
        cls, rate = "contracting", 0.5 * float(np.min(mu))
    elif np.min(w_min) >= -tol:
        cls, rate = "semi-contracting", 0.0
    else:
        cls, rate = "inconclusive", 0.0
        notes.append("W has negative eigenvalues")
    return ClosedLoopReport(np.asarray(solved.times), w_min, h_min, rate, cls, tuple(notes))


# ---------------------------------------------------------------------------
# observer


def sample_and_hold(times, values):
    """Piecewise-constant measurement stream (value at the latest sample time)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]

    def y_m(t):
        k = int(np.searchsorted(times, t + 1e-12, side="right") - 1)
        return values[max(k, 0)]

    return y_m


@dataclass(frozen=True)
class ObserverProblem:
    """Plant ``dx/dt = f(x, t) + G(x, t) w`` observed through ``y(x, t)``.

    ``R`` weighs the measurement residual, ``Q`` the disturbance ``w``.
    ``d2y_dx2`` (shape (q, m, m)) is optional; finite differences of
    ``dy_dx`` are used when it is missing.
    """

    f: Callable
    df_dx: Callable
    G: object
    y: Callable
    dy_dx: Callable
    y_m: Callable
    R: np.ndarray
    Q: np.ndarray
    Pi0: np.ndarray
    x0_hat: np.ndarray
    d2y_dx2: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        for key in ("R", "Q", "Pi0"):
            mat = np.atleast_2d(np.asarray(getattr(self, key), dtype=float))
            if np.max(np.abs(mat - mat.T)) > 1e-12:
                raise ValueError(f"{key} must be symmetric")
            object.__setattr__(self, key, mat)
        if np.linalg.eigvalsh(self.Q)[0] <= 0:
            raise ValueError("disturbance weight Q must be positive definite")
        if np.linalg.eigvalsh(self.R)[0] < -1e-12:
            raise ValueError("measurement weight R must be positive semidefinite")
        if np.linalg.eigvalsh(self.Pi0)[0] <= 0:
            raise ValueError("initial information Pi0 must be positive definite")
        object.__setattr__(self, "x0_hat", np.atleast_1d(np.asarray(self.x0_hat, dtype=float)))
        if not callable(self.G):
            const = np.atleast_2d(np.asarray(self.G, dtype=float))
            object.__setattr__(self, "G", lambda x, t: const)

    def gmat(self, x, t):
        return np.atleast_2d(np.asarray(self.G(x, t), dtype=float))


def _obs_second(op, x, t, y_m):
    """``(h_x, h_xx, h_xp, h_pp)`` of the observer Hamiltonian at ``p = 0``."""
    J = np.atleast_2d(np.asarray(op.dy_dx(x, t), dtype=float))
    resid = np.atleast_1d(np.asarray(op.y(x, t), dtype=float)) - y_m
    weighted = op.R @ resid
    h_x = -J.T @ weighted
    if op.d2y_dx2 is not None:
        curv = np.asarray(op.d2y_dx2(x, t), dtype=float)
    else:
        curv = np.moveaxis(_fd_jac(lambda z: np.atleast_2d(np.asarray(op.dy_dx(z, t), float)), x), -1, 1)
    h_xx = -J.T @ op.R @ J - np.einsum("k,kab->ab", weighted, curv.reshape(len(weighted), x.size, x.size))
    h_xp = np.atleast_2d(np.asarray(op.df_dx(x, t), dtype=float)).T
    G = op.gmat(x, t)
    h_pp = G @ np.linalg.solve(op.Q, G.T)
    return h_x, 0.5 * (h_xx + h_xx.T), h_xp, h_pp


def observer_hamiltonian(op: ObserverProblem) -> Hamiltonian:
    """``h = -1/2 r^T R r + p.f + 1/2 p^T G Q^-1 G^T p`` with ``r = y(x) - y_m``.

    The disturbance term is the stationary value over ``w`` (``w* = Q^-1 G^T p``).
    Second derivatives are the ones used by the estimator, evaluated at
    ``p = 0``; that is where the estimate lives.
    """

    def resid(x, t):
        return np.atleast_1d(np.asarray(op.y(x, t), dtype=float)) - op.y_m(t)

    def h(p, x, t):
        r = resid(x, t)
        G = op.gmat(x, t)
        return -0.5 * r @ op.R @ r + p @ op.f(x, t) + 0.5 * p @ G @ np.linalg.solve(op.Q, G.T @ p)

    def dh_dp(p, x, t):
        G = op.gmat(x, t)
        return np.asarray(op.f(x, t), float) + G @ np.linalg.solve(op.Q, G.T @ p)

    def dh_dx(p, x, t):
        h_x, _, h_xp, _ = _obs_second(op, x, t, op.y_m(t))
        return h_x + h_xp @ p

    return Hamiltonian(
        h, dh_dx, dh_dp,
        lambda p, x, t: _obs_second(op, x, t, op.y_m(t))[1],
        lambda p, x, t: _obs_second(op, x, t, op.y_m(t))[2],
        lambda p, x, t: _obs_second(op, x, t, op.y_m(t))[3],
        op.name,
    )


@dataclass(frozen=True)
class ObserverEstimate:
    x_hat: np.ndarray
    Pi: np.ndarray
    t: float = 0.0


def _obs_rhs(op, x, Pi, t, y_m):
    h_x, h_xx, h_xp, h_pp = _obs_second(op, x, t, y_m)
    dx = np.asarray(op.f(x, t), dtype=float) + np.linalg.solve(Pi, h_x)
    dPi = -h_xx - h_xp @ Pi - Pi @ h_xp.T - Pi @ h_pp @ Pi
    return dx, dPi


def _check_information(Pi, t):
    if not np.all(np.isfinite(Pi)):
        raise SingularInformation(f"information matrix is not finite at t={t:.6g}")
    eig = np.linalg.eigvalsh(Pi)
    if eig[0] <= 0 or eig[-1] / eig[0] > 1e12:
        raise SingularInformation(f"information matrix lost rank at t={t:.6g}")


def observer_step(op, est, y_m, dt) -> ObserverEstimate:
    """RK4 step of ``dx/dt = h_p + Pi^-1 h_x`` and the forward Riccati equation for ``Pi``.

    ``y_m`` is held constant over the step.
    """
    x, Pi, t = est.x_hat, est.Pi, est.t
    _check_information(Pi, t)
    y_m = np.atleast_1d(np.asarray(y_m, dtype=float))
    f = lambda xx, PP, tt: _obs_rhs(op, xx, PP, tt, y_m)
    k1 = f(x, Pi, t)
    k2 = f(x + dt / 2 * k1[0], Pi + dt / 2 * k1[1], t + dt / 2)
    k3 = f(x + dt / 2 * k2[0], Pi + dt / 2 * k2[1], t + dt / 2)
    k4 = f(x + dt * k3[0], Pi + dt * k3[1], t + dt)
    xn = x + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    Pn = Pi + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    Pn = 0.5 * (Pn + Pn.T)
    _check_information(Pn, t + dt)
    if not np.all(np.isfinite(xn)):
        raise NonFiniteState(f"estimate escaped at t={t + dt:.6g}")
    return ObserverEstimate(xn, Pn, t + dt)


@dataclass(frozen=True)
class ObserverRun:
    times: np.ndarray
    x_hat: np.ndarray
    Pi: np.ndarray
    gain: np.ndarray  # Pi^-1 J^T R, (T, m, q)

    @property
    def covariance(self):
        return np.linalg.inv(self.Pi)

    def to_csv(self, path):
        m, q = self.gain.shape[1], self.gain.shape[2]
        header = ["t"] + [f"xhat{i}" for i in range(m)] + [f"Pi{i}{i}" for i in range(m)]
        header += [f"gain{i}{j}" for i in range(m) for j in range(q)]
        rows = [
            [t, *x, *np.diag(P), *K.ravel()]
            for t, x, P, K in zip(self.times, self.x_hat, self.Pi, self.gain)
        ]
        return write_csv(path, header, rows)


def run_observer(op, t0, t1, dt) -> ObserverRun:
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    est = ObserverEstimate(op.x0_hat.copy(), op.Pi0.copy(), t0)
    times, xs, Ps = [t0], [est.x_hat], [est.Pi]
    for k in range(n):
        est = observer_step(op, est, op.y_m(est.t), h)
        est = ObserverEstimate(est.x_hat, est.Pi, t0 + (k + 1) * h)
        times.append(est.t)
        xs.append(est.x_hat)
        Ps.append(est.Pi)
    gains = []
    for x, P, t in zip(xs, Ps, times):
        J = np.atleast_2d(np.asarray(op.dy_dx(x, t), dtype=float))
        gains.append(np.linalg.solve(P, J.T @ op.R))
    return ObserverRun(np.array(times), np.array(xs), np.array(Ps), np.array(gains))


def kalman_bucy(A, C, G, R_meas, Q_dist, x0, P0, y_m, t0, t1, dt):
    """Reference Kalman-Bucy filter on the covariance ``P``.

    ``dx/dt = A x + P C^T R (y_m - C x)``,
    ``dP/dt = A P + P A^T + G Q^-1 G^T - P C^T R C P``, RK4 with ``y_m`` held per step.
    Returns ``(times, x, P)``.
    """
    A, C, G = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, C, G))
    R = np.atleast_2d(np.asarray(R_meas, dtype=float))
    W = G @ np.linalg.inv(np.atleast_2d(Q_dist)) @ G.T

    def f(x, P, ym):
        return A @ x + P @ C.T @ R @ (ym - C @ x), A @ P + P @ A.T + W - P @ C.T @ R @ C @ P

    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    P = np.atleast_2d(np.asarray(P0, dtype=float))
    times, xs, Ps = [t0], [x], [P]
    for k in range(n):
        t = t0 + k * h
        ym = np.atleast_1d(y_m(t))
        k1 = f(x, P, ym)
        k2 = f(x + h / 2 * k1[0], P + h / 2 * k1[1], ym)
        k3 = f(x + h / 2 * k2[0], P + h / 2 * k2[1], ym)
        k4 = f(x + h * k3[0], P + h * k3[1], ym)
        x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        P = P + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        P = 0.5 * (P + P.T)
        times.append(t0 + (k + 1) * h)
        xs.append(x)
        Ps.append(P)
    return np.array(times), np.array(xs), np.array(Ps)


# ---------------------------------------------------------------------------
# LQ oracle


@dataclass(frozen=True)
class LqOracle:
    times: np.ndarray
    P: np.ndarray  # (T, m, m)
    K: np.ndarray  # (T, k, m)
    P_inf: Optional[np.ndarray]
    K_inf: Optional[np.ndarray]
    dense: Optional[Callable] = None

    def at(self, t):
        """Riccati solution at ``t`` from the integrator's dense output."""
        return self.dense(t)


def lq_oracle(A, B, Q_cost, R_cost, horizon, P_f=None, t0=0.0, times=None) -> LqOracle:
    """Classical LQR Riccati solution, independent of the characteristic code.

    Solves ``-dP/dt = A^T P + P A - P B R^-1 B^T P + Q`` backward from
    ``P(t0 + horizon) = P_f`` with ``solve_ivp`` (rtol 1e-12).  Here
    ``Q_cost`` weighs the state and ``R_cost`` the control, following the
    usual LQR naming.  ``A`` and ``B`` may be functions of time.
    """
    A_t, B_t = _mat_fn(A), _mat_fn(B)
    Q = np.atleast_2d(np.asarray(Q_cost, dtype=float))
    R = np.atleast_2d(np.asarray(R_cost, dtype=float))
    m = Q.shape[0]
    Ri = np.linalg.inv(R)
    P_f = np.zeros((m, m)) if P_f is None else np.atleast_2d(np.asarray(P_f, dtype=float))
    t_f = t0 + horizon

    def rhs(t, y):
        P = y.reshape(m, m)
        a, b = A_t(t), B_t(t)
        dP = -(a.T @ P + P @ a - P @ b @ Ri @ b.T @ P + Q)
        return dP.ravel()

    if times is None:
        times = np.linspace(t0, t_f, 201)
    times = np.asarray(times, dtype=float)
    sol = solve_ivp(rhs, (t_f, t0), P_f.ravel(), method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True)
    P = np.array([sol.sol(t).reshape(m, m) for t in times])
    P = 0.5 * (P + np.swapaxes(P, 1, 2))
    K = np.array([Ri @ B_t(t).T @ Pt for t, Pt in zip(times, P)])
    P_inf = K_inf = None
    if not callable(A) and not callable(B):
        try:
            P_inf = scipy.linalg.solve_continuous_are(A_t(0), B_t(0), Q, R)
            K_inf = Ri @ B_t(0).T @ P_inf
        except (np.linalg.LinAlgError, ValueError):
            pass
    return LqOracle(times, P, K, P_inf, K_inf, lambda t: sol.sol(t).reshape(m, m))
