"""Hamiltonian characteristics, Hessian (generalised Riccati) propagation and
the Lie-derivative chains that guarantee convexity is preserved.

Conventions: ``p`` is the gradient of the value function, ``h(p, x, t)`` the
Hamiltonian.  ``d2h_dxdp[a, b] = d^2 h / dx_a dp_b``; its transpose is
``d2h/dp dx``.  Along a characteristic

    dx/dt = h_p,   dp/dt = -h_x,
    dH/dt = -h_xx - h_xp H - H h_px - H h_pp H,

and the inverse ``S = H^-1`` obeys

    dS/dt = S h_xx S + S h_xp + h_px S + h_pp.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DerivativeMismatch, InsufficientTrajectory, NonFiniteState, SingularHessian
from .io import write_csv

__all__ = [
    "Hamiltonian",
    "CharState",
    "CharTrajectory",
    "characteristic_step",
    "inverse_riccati_step",
    "integrate_characteristic",
    "integrate_inverse",
    "LieResult",
    "lie_chain",
    "lie_condition_x",
    "lie_condition_p",
    "ConvexityReport",
    "convexity_monitor",
    "direction_sign",
]

FD_STEP = 1e-5


def direction_sign(direction) -> float:
    if direction in ("forward", 1, 1.0):
        return 1.0
    if direction in ("backward", -1, -1.0):
        return -1.0
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def _fd_grad(f, z, step=FD_STEP):
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape)
    for a in range(z.size):
        e = np.zeros_like(z)
        e[a] = step * max(1.0, abs(z[a]))
        out[a] = (f(z + e) - f(z - e)) / (2 * e[a])
    return out


def _fd_jac(f, z, step=FD_STEP):
    """Columns ``d f / d z_a`` of a vector-valued ``f``."""
    z = np.asarray(z, dtype=float)
    cols = []
    for a in range(z.size):
        e = np.zeros_like(z)
        e[a] = step * max(1.0, abs(z[a]))
        cols.append((np.asarray(f(z + e)) - np.asarray(f(z - e))) / (2 * e[a]))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Hamiltonian:
    """Scalar ``h(p, x, t)`` with first and second derivatives (all ``(p, x, t)``)."""

    h: Callable
    dh_dx: Callable
    dh_dp: Callable
    d2h_dx2: Callable
    d2h_dxdp: Callable
    d2h_dp2: Callable
    name: str = ""

    @classmethod
    def from_function(cls, h, dh_dx=None, dh_dp=None, name=""):
        """Fill missing derivatives by central differences.

        Gradients use step ``1e-5 * max(1, |z|)`` on ``h``; Hessians use the
        same step on the gradients, so when gradients are themselves finite
        differences the Hessian error is roughly ``1e-5`` relative.
        """
        if dh_dx is None:
            def dh_dx(p, x, t):
                return _fd_grad(lambda z: h(p, z, t), x)
        if dh_dp is None:
            def dh_dp(p, x, t):
                return _fd_grad(lambda z: h(z, x, t), p)

        def d2h_dx2(p, x, t):
            j = _fd_jac(lambda z: dh_dx(p, z, t), x)
            return 0.5 * (j + j.T)

        def d2h_dxdp(p, x, t):
            # [a, b] = d/dp_b of dh/dx_a
            return _fd_jac(lambda z: dh_dx(z, x, t), p)

        def d2h_dp2(p, x, t):
            j = _fd_jac(lambda z: dh_dp(z, x, t), p)
            return 0.5 * (j + j.T)

        return cls(h, dh_dx, dh_dp, d2h_dx2, d2h_dxdp, d2h_dp2, name)

    def second(self, p, x, t):
        """``(h_xx, h_xp, h_pp)`` as float arrays."""
        f = lambda g: np.atleast_2d(np.asarray(g(p, x, t), dtype=float))
        return f(self.d2h_dx2), f(self.d2h_dxdp), f(self.d2h_dp2)

    def check(self, p, x, t=0.0, tol=1e-5):
        """Symmetry and cross-derivative consistency at one point.

        Returns the residual dictionary; raises :class:`DerivativeMismatch`
        when a relative residual exceeds ``tol`` (symmetry uses ``1e-10``).
        """
        p = np.atleast_1d(np.asarray(p, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        hxx, hxp, hpp = self.second(p, x, t)
        out = {
            "d2h_dx2 symmetry": float(np.max(np.abs(hxx - hxx.T))),
            "d2h_dp2 symmetry": float(np.max(np.abs(hpp - hpp.T))),
        }
        for key in out:
            if out[key] > 1e-10:
                raise DerivativeMismatch(f"{key} residual {out[key]:.3g}", out[key])
        from_x = _fd_jac(lambda z: np.asarray(self.dh_dx(z, x, t), dtype=float), p)
        from_p = _fd_jac(lambda z: np.asarray(self.dh_dp(p, z, t), dtype=float), x).T
        for key, ref in (("d2h_dxdp vs dh_dx", from_x), ("d2h_dxdp vs dh_dp", from_p)):
            r = float(np.max(np.abs(hxp - ref)))
            out[key] = r
            if r / max(1.0, float(np.max(np.abs(ref)))) > tol:
                raise DerivativeMismatch(f"{key} residual {r:.3g}", r)
        return out


@dataclass(frozen=True)
class CharState:
    """Point on a characteristic: position, gradient ``p``, Hessian ``H`` and time.

    For the inverse propagation the ``H`` slot holds ``H^-1``.
    """

    x: np.ndarray
    p: np.ndarray
    H: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))
        object.__setattr__(self, "t", float(self.t))

    def inverted(self) -> "CharState":
        """Same point with ``H`` replaced by its inverse."""
        return replace(self, H=_safe_inverse(self.H))


def _safe_inverse(H):
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > 1e12:
        raise SingularHessian("Hessian is singular")
    inv = np.linalg.inv(H)
    return 0.5 * (inv + inv.T)


def _char_rhs(ham, x, p, H, t):
    hxx, hxp, hpp = ham.second(p, x, t)
    dx = np.asarray(ham.dh_dp(p, x, t), dtype=float)
    dp = -np.asarray(ham.dh_dx(p, x, t), dtype=float)
    dH = -hxx - hxp @ H - H @ hxp.T - H @ hpp @ H
    return dx, dp, dH


def _inv_rhs(ham, x, p, S, t):
    hxx, hxp, hpp = ham.second(p, x, t)
    dx = np.asarray(ham.dh_dp(p, x, t), dtype=float)
    dp = -np.asarray(ham.dh_dx(p, x, t), dtype=float)
    dS = S @ hxx @ S + S @ hxp + hxp.T @ S + hpp
    return dx, dp, dS


def _rk4(f, state, h):
    x, p, H, t = state.x, state.p, state.H, state.t
    k1 = f(x, p, H, t)
    k2 = f(x + h / 2 * k1[0], p + h / 2 * k1[1], H + h / 2 * k1[2], t + h / 2)
    k3 = f(x + h / 2 * k2[0], p + h / 2 * k2[1], H + h / 2 * k2[2], t + h / 2)
    k4 = f(x + h * k3[0], p + h * k3[1], H + h * k3[2], t + h)
    new = [
        z + h / 6 * (a + 2 * b + 2 * c + d)
        for z, a, b, c, d in zip((x, p, H), k1, k2, k3, k4)
    ]
    Hn = 0.5 * (new[2] + new[2].T)
    if not all(np.all(np.isfinite(z)) for z in (new[0], new[1], Hn)):
        raise NonFiniteState(f"characteristic escaped at t={t + h:.6g}")
    return CharState(new[0], new[1], Hn, t + h)


def characteristic_step(ham, s, dt, direction="forward") -> CharState:
    """RK4 step of ``(x, p, H)``; ``direction='backward'`` runs time downwards."""
    h = direction_sign(direction) * abs(dt)
    return _rk4(lambda x, p, H, t: _char_rhs(ham, x, p, H, t), s, h)


def inverse_riccati_step(ham, s_inv, dt, direction="forward") -> CharState:
    """RK4 step of ``(x, p, S)`` with ``S = H^-1`` held in ``s_inv.H``."""
    S = s_inv.H
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e12:
        raise SingularHessian("inverse Hessian is singular at entry")
    h = direction_sign(direction) * abs(dt)
    return _rk4(lambda x, p, S, t: _inv_rhs(ham, x, p, S, t), s_inv, h)


@dataclass(frozen=True)
class CharTrajectory:
    states: tuple
    direction: str = "forward"

    def __post_init__(self):
        t = np.array([s.t for s in self.states])
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "_sorted", (
            t[order],
            np.array([self.states[k].x for k in order]),
            np.array([self.states[k].p for k in order]),
            np.array([self.states[k].H for k in order]),
        ))

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def x(self):
        return np.array([s.x for s in self.states])

    @property
    def p(self):
        return np.array([s.p for s in self.states])

    @property
    def H(self):
        return np.array([s.H for s in self.states])

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.H)

    def interp(self, t):
        """``(x, p, H)`` linearly interpolated at ``t``, clamped to the ends."""
        times, xs, ps, Hs = self._sorted
        if len(times) == 1:
            return xs[0], ps[0], Hs[0]
        k = min(max(int(np.searchsorted(times, t)) - 1, 0), len(times) - 2)
        span = times[k + 1] - times[k]
        w = min(max((t - times[k]) / span, 0.0), 1.0) if span > 0 else 0.0
        return (
            (1 - w) * xs[k] + w * xs[k + 1],
            (1 - w) * ps[k] + w * ps[k + 1],
            (1 - w) * Hs[k] + w * Hs[k + 1],
        )

    def at(self, t) -> CharState:
        return CharState(*self.interp(t), t)

    def to_csv(self, path):
        m = self.states[0].x.size
        header = ["t"] + [f"x{i}" for i in range(m)] + [f"p{i}" for i in range(m)]
        header += [f"eigH{i}" for i in range(m)]
        eig = self.eigenvalues()
        rows = [[s.t, *s.x, *s.p, *e] for s, e in zip(self.states, eig)]
        return write_csv(path, header, rows)


def _integrate(stepper, ham, s0, t_end, dt, direction):
    sign = direction_sign(direction)
    span = (t_end - s0.t) * sign
    if span < -1e-12:
        raise ValueError("t_end lies on the wrong side of the start time for this direction")
    n = max(1, int(np.ceil(span / abs(dt) - 1e-9))) if span > 0 else 0
    h = span / n if n else abs(dt)
    states = [s0]
    s = s0
    for k in range(n):
        s = stepper(ham, s, h, direction)
        # pin the clock to exact multiples of the step
        s = CharState(s.x, s.p, s.H, s0.t + sign * (k + 1) * h)
        states.append(s)
    return CharTrajectory(tuple(states), "forward" if sign > 0 else "backward")


def integrate_characteristic(ham, s0, t_end, dt, direction="forward") -> CharTrajectory:
    """Characteristic from ``s0`` to ``t_end`` with steps of at most ``dt``."""
    return _integrate(characteristic_step, ham, s0, t_end, dt, direction)


def integrate_inverse(ham, s0_inv, t_end, dt, direction="forward") -> CharTrajectory:
    return _integrate(inverse_riccati_step, ham, s0_inv, t_end, dt, direction)


# ---------------------------------------------------------------------------
# Lie-derivative chains


@dataclass(frozen=True)
class LieResult:
    order: Optional[int]
    sign_ok: bool
    kernel_dims: tuple = ()
    min_sign_eig: float = 0.0
    report: dict = field(default_factory=dict)


def lie_chain(ham, traj, j_max, which="x"):
    """Chain matrices ``L^0 .. L^{j_max-1}`` at every sample, shape (j_max, T, m, m).

    Time derivatives are taken with ``np.gradient`` over the sample times.
    """
    if j_max not in (1, 2, 3):
        raise ValueError("j_max must be 1, 2 or 3")
    states = traj.states
    need = max(2, 2 * (j_max - 1) + 1) if j_max > 1 else 1
    if len(states) < need:
        raise InsufficientTrajectory(
            f"{len(states)} samples cannot support time derivatives up to order {j_max - 1}"
        )
    t = np.array([s.t for s in states])
    order = np.argsort(t)
    states = [states[k] for k in order]
    t = t[order]
    sec = [ham.second(s.p, s.x, s.t) for s in states]
    hxx = np.array([a for a, _, _ in sec])
    hxp = np.array([b for _, b, _ in sec])
    hpp = np.array([c for _, _, c in sec])
    hpx = np.swapaxes(hxp, 1, 2)
    chain = [-hxx if which == "x" else hpp]
    for _ in range(1, j_max):
        cur = chain[-1]
        if len(t) > 1:
            ddt = np.gradient(cur, t, axis=0, edge_order=2 if len(t) > 2 else 1)
        else:
            ddt = np.zeros_like(cur)
        if which == "x":
            chain.append(-ddt - hxp @ cur - cur @ hpx)
        else:
            chain.append(ddt + hpx @ cur + cur @ hxp)
    return np.array(chain)


def _null_basis(mat, rtol):
    u, sv, vt = np.linalg.svd(mat)
    scale = max(1.0, float(sv[0]) if sv.size else 0.0)
    rank = int(np.sum(sv > rtol * scale))
    return vt[rank:].T


def _lie_condition(ham, traj, j_max, which, rtol=1e-7):
    chain = lie_chain(ham, traj, j_max, which)
    sigma = 1.0 if traj.direction == "forward" else -1.0
    m = chain.shape[-1]
    worst_order = 0
    min_sign = np.inf
    dims_worst = None
    for k in range(chain.shape[1]):
        l0 = sigma * chain[0, k]
        l0 = 0.5 * (l0 + l0.T)
        eig0 = np.linalg.eigvalsh(l0)
        min_sign = min(min_sign, float(eig0[0]))
        basis = np.eye(m)
        dims = [m]
        order = None
        for j in range(j_max):
            basis = basis @ _null_basis(chain[j, k] @ basis, rtol) if basis.shape[1] else basis
            dims.append(basis.shape[1])
            if basis.shape[1] == 0:
                order = j + 1
                break
        if order is None:
            worst_order = None
            dims_worst = tuple(dims)
            break
        if order > worst_order:
            worst_order = order
            dims_worst = tuple(dims)
    scale = max(1.0, float(np.max(np.abs(chain[0]))))
    sign_ok = min_sign >= -rtol * scale
    final = worst_order if sign_ok else None
    report = {
        "direction": traj.direction,
        "chain": which,
        "samples": chain.shape[1],
        "min_eig_sign_L0": min_sign,
        "kernel_dims": dims_worst,
        "sign_ok": sign_ok,
    }
    return LieResult(final, sign_ok, dims_worst or (), min_sign, report)


def lie_condition_x(ham, traj, j_max=3, rtol=1e-7) -> LieResult:
    """State-curvature chain ``L^0 = -h_xx``.

    ``order`` is the number of chain terms needed before the nested kernel
    ``{z : L^0 z = 0, ..., L^{j-1} z = 0}`` is trivial at every sample, with
    ``sigma L^0`` positive semidefinite (``sigma`` = +1 forward, -1 backward).
    ``None`` when the kernel survives ``j_max`` terms or the sign test fails.
    """
    return _lie_condition(ham, traj, j_max, "x", rtol)


def lie_condition_p(ham, traj, j_max=3, rtol=1e-7) -> LieResult:
    """Gradient-curvature chain ``L^0 = h_pp``; same order semantics as the x chain."""
    return _lie_condition(ham, traj, j_max, "p", rtol)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexityReport:
    trajectory: CharTrajectory
    min_eigs: np.ndarray
    lost_at: Optional[float]
    semidefinite: bool

    @property
    def times(self):
        return self.trajectory.times

    @property
    def convex(self) -> bool:
        return self.lost_at is None


def convexity_monitor(ham, s0, t_span, dt, direction="forward", tol=1e-8) -> ConvexityReport:
    """Track ``min eig H`` along a characteristic.

    ``t_span`` is the end time (or ``(t0, t1)``, whose start replaces
    ``s0.t``).  ``lost_at`` is the first time the minimum eigenvalue drops
    below ``-tol``; ``semidefinite`` flags samples with ``|min eig| <= tol``.
    """
    if np.ndim(t_span):
        t0, t1 = t_span
        s0 = replace(s0, t=float(t0))
        t_end = t1
    else:
        t_end = float(t_span)
    traj = integrate_characteristic(ham, s0, t_end, dt, direction)
    mins = np.array([np.linalg.eigvalsh(s.H)[0] for s in traj.states])
    bad = np.flatnonzero(mins < -tol)
    lost = float(traj.states[bad[0]].t) if bad.size else None
    semi = bool(np.any(np.abs(mins) <= tol))
    return ConvexityReport(traj, mins, lost, semi)
