"""Method-of-lines integration and empirical contraction rates.

The semi-discrete system is ``dPhi/dt = -h(Phi, upwind grad Phi) + div G``
on free nodes.  Nodes with prescribed values follow the boundary data: their
time derivative is a central difference of the data in time, and after every
step they are reset to the exact data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .errors import CflViolation, DegenerateSeries, NonFiniteState
from .grid import central_gradient, upwind_state_gradient
from .model import Dirichlet, InflowGiven, Neumann
from .io import write_csv

__all__ = [
    "SemiDiscrete",
    "Trajectory",
    "DecaySeries",
    "RateFit",
    "rhs",
    "stable_dt",
    "step",
    "run",
    "perturbation_experiment",
    "fit_rate",
]

CFL_SAFETY = 0.4


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    snapshots: np.ndarray  # (T, n, N)
    grid: object = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "snapshots", np.asarray(self.snapshots, dtype=float))

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def to_csv(self, path):
        """Long format: one row per (time, node)."""
        n = self.snapshots.shape[1]
        coords = self.grid.coords
        names = ["t"] + ["x", "y"][: coords.shape[0]] + [f"phi{i}" for i in range(n)]
        rows = (
            [t, *coords[:, k], *snap[:, k]]
            for t, snap in zip(self.times, self.snapshots)
            for k in range(coords.shape[1])
        )
        return write_csv(path, names, rows)


@dataclass(frozen=True)
class DecaySeries:
    """Squared distance between two solutions over time.

    ``d2`` uses trapezoidal quadrature; ``discrete`` is the plain node sum
    ``sum dPhi^T dPhi * dV`` the semi-discrete contraction argument controls.
    """

    times: np.ndarray
    d2: np.ndarray
    discrete: np.ndarray = None

    def __post_init__(self):
        d2 = np.asarray(self.d2, dtype=float)
        if np.any(d2 < 0):
            raise ValueError("d2 must be non-negative")
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "d2", d2)
        if self.discrete is not None:
            object.__setattr__(self, "discrete", np.asarray(self.discrete, dtype=float))

    def to_csv(self, path):
        if self.discrete is None:
            return write_csv(path, ["t", "d2"], zip(self.times, self.d2))
        return write_csv(path, ["t", "d2", "d2_discrete"], zip(self.times, self.d2, self.discrete))


@dataclass(frozen=True)
class RateFit:
    rate: float
    r_squared: float
    intercept: float = 0.0
    window: tuple = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# semi-discrete operator plan


class SemiDiscrete:
    """Cached geometry and boundary data for repeated right-hand-side evaluations.

    Evaluates the same discrete operator as :func:`grid.upwind_state_gradient`
    and :func:`grid.diffusion_divergence`, with per-run work (face indices,
    face coordinates, static boundary values) done once.  Problems flagged
    ``linear`` with static Neumann data are assembled into one sparse matrix
    plus offset, probed column by column from the generic evaluation.
    """

    def __init__(self, problem, grid, bounds, linear_limit=6000):
        self.problem, self.grid, self.bounds = problem, grid, bounds
        n, m = problem.n_state, grid.dims
        self.n, self.m = n, m
        self.shape = (n,) + grid.shape
        self.x = grid.coords
        xs = grid.reshape(self.x)
        self.lo = [self._sl(j, slice(None, -1)) for j in range(m)]
        self.hi = [self._sl(j, slice(1, None)) for j in range(m)]
        self.first = [self._sl(j, slice(0, 1)) for j in range(m)]
        self.last = [self._sl(j, slice(-1, None)) for j in range(m)]
        self.xface = [
            (0.5 * (xs[self.lo[j]] + xs[self.hi[j]])).reshape(m, -1) for j in range(m)
        ]
        self.fshape = [tuple(s - (k == j) for k, s in enumerate(grid.shape)) for j in range(m)]
        kinds = [bounds.kind(f) for f in grid.faces]
        self.static = all(k is None or not callable(_payload(k)) for k in kinds)
        self.has_inflow = any(isinstance(k, InflowGiven) for k in kinds)
        dmask = np.zeros(grid.size, dtype=bool)
        for face in grid.faces:
            if isinstance(bounds.kind(face), Dirichlet):
                dmask[grid.face_nodes(face)] = True
        self.dirichlet = np.broadcast_to(dmask, (n, grid.size))
        self._static_given = bounds.given_values(grid, 0.0, n) if self.static else None
        self.ghosts = []
        self._operator = None
        self._props = {}
        if problem.g_flux is not None:
            bounds.check_diffusive(grid)
            for face in grid.faces:
                kind = bounds.kind(face)
                if isinstance(kind, (Neumann, InflowGiven)):
                    axis, side = grid.face_axis(face)
                    nodes = grid.face_nodes(face)
                    self.ghosts.append((axis, side, nodes, self.x[:, nodes], kind))
        neumann_static = all(
            not callable(_payload(k)) for *_, k in self.ghosts
        )
        if problem.linear and neumann_static and n * grid.size <= linear_limit:
            self._operator = self._assemble()

    def _sl(self, axis, s):
        out = [slice(None)] * (1 + self.grid.dims)
        out[1 + axis] = s
        return tuple(out)

    def one_sided(self, values):
        """Backward and forward differences per axis, each (n, m, N)."""
        u = values.reshape(self.shape)
        back = np.empty((self.n, self.m, self.grid.size))
        fwd = np.empty_like(back)
        for j in range(self.m):
            d = np.diff(u, axis=1 + j) / self.grid.spacing[j]
            b = np.concatenate([d[self.first[j]], d], axis=1 + j)
            f = np.concatenate([d, d[self.last[j]]], axis=1 + j)
            back[:, j] = b.reshape(self.n, -1)
            fwd[:, j] = f.reshape(self.n, -1)
        return back, fwd

    def velocity(self, values, t, sides=None):
        back, fwd = sides if sides is not None else self.one_sided(values)
        probe = 0.5 * (back + fwd)
        return np.asarray(self.problem.dh_dGradPhi(values, probe, self.x, t), dtype=float)

    def upwind(self, values, t):
        back, fwd = self.one_sided(values)
        vel = self.velocity(values, t, (back, fwd))
        return np.where(vel > 0, back, fwd), vel

    def diffusion(self, values, t):
        p = self.problem
        n, m = self.n, self.m
        u = values.reshape(self.shape)
        grad_c = central_gradient(self.grid, values) if m > 1 or self.ghosts else None
        gc = grad_c.reshape((n, m) + self.grid.shape) if grad_c is not None else None
        div = np.zeros(self.shape)
        for j in range(m):
            normal = np.diff(u, axis=1 + j) / self.grid.spacing[j]
            gface = np.empty((n, m) + self.fshape[j])
            for k in range(m):
                if k == j:
                    gface[:, k] = normal
                else:
                    gface[:, k] = 0.5 * (gc[:, k][self.lo[j]] + gc[:, k][self.hi[j]])
            flux = np.asarray(p.g_flux(gface.reshape(n, m, -1), self.xface[j], t))[:, j]
            flux = flux.reshape((n,) + self.fshape[j]) / self.grid.spacing[j]
            div[self.lo[j]] += flux
            div[self.hi[j]] -= flux
        div = div.reshape(n, -1)
        for axis, side, nodes, xb, kind in self.ghosts:
            q = kind.evaluate(xb, t, n) if isinstance(kind, Neumann) else 0.0
            gb = grad_c[:, :, nodes].copy()
            gb[:, axis] = side * q
            fb = np.asarray(p.g_flux(gb, xb, t))[:, axis]
            div[:, nodes] += side * fb / self.grid.spacing[axis]
        return div

    def given_mask(self, values, t):
        if not self.has_inflow:
            return self.dirichlet
        return self.bounds.given_mask(self.grid, self.velocity(values, t))

    def given_values(self, t):
        if self._static_given is not None:
            return self._static_given
        return self.bounds.given_values(self.grid, t, self.n)

    def raw_rhs(self, values, t):
        """``-h + div G`` (projected) before boundary nodes are overridden."""
        if self._operator is not None:
            mat, offset = self._operator
            return (mat @ values.ravel()).reshape(self.n, -1) + offset
        p = self.problem
        grad, _ = self.upwind(values, t)
        out = -np.asarray(p.h(values, grad, self.x, t), dtype=float)
        if p.g_flux is not None:
            out = out + self.diffusion(values, t)
        if p.constraint_projector is not None:
            out = np.asarray(p.constraint_projector) @ out
        return out

    def _assemble(self):
        """Probe the linear operator column by column: ``raw_rhs(y) = A y + b``."""
        size = self.n * self.grid.size
        zero = np.zeros((self.n, self.grid.size))
        offset = self.raw_rhs(zero, 0.0)
        cols = []
        unit = np.zeros(size)
        for k in range(size):
            unit[k] = 1.0
            col = (self.raw_rhs(unit.reshape(self.n, -1), 0.0) - offset).ravel()
            unit[k] = 0.0
            cols.append(sp.csc_matrix(col[:, None]))
        return sp.hstack(cols).tocsr(), offset

    def rhs(self, values, t, mask=None):
        out = self.raw_rhs(values, t)
        if mask is None:
            mask = self.given_mask(values, t)
        if mask.any():
            if self.static:
                gdot = 0.0
            else:
                eps = 1e-6
                gdot = (self.bounds.given_values(self.grid, t + eps, self.n)
                        - self.bounds.given_values(self.grid, t - eps, self.n)) / (2 * eps)
            out = np.where(mask, gdot, out)
        return out

    @property
    def is_affine(self) -> bool:
        """One RK4 step is a fixed affine map (linear problem, static boundary data)."""
        return self._operator is not None and self.static

    def _propagator(self, dt, values):
        """``T, c`` with ``RK4(y) = T y + c`` for the masked linear system."""
        if dt not in self._props:
            mat, offset = self._operator
            mask = np.asarray(self.given_mask(values, 0.0)).ravel()
            keep = sp.diags((~mask).astype(float))
            a = (keep @ mat).tocsr()
            b = np.where(mask, 0.0, offset.ravel())
            eye = sp.identity(a.shape[0], format="csr")
            term = eye
            poly_t = eye.copy()
            poly_c = eye * dt
            for k in range(1, 5):
                term = (term @ a) * (dt / k)
                poly_t = poly_t + term
                if k < 4:
                    poly_c = poly_c + term * (dt / (k + 1))
            # given nodes are reset to their (static) data after every step
            exact = np.nan_to_num(self.given_values(0.0).ravel())
            keep_rows = sp.diags((~mask).astype(float))
            shift = np.where(mask, exact, poly_c @ b)
            self._props = {dt: ((keep_rows @ poly_t).tocsr(), shift)}
        return self._props[dt]

    def step(self, values, t, dt):
        y = values
        if self.is_affine:
            mat, shift = self._propagator(dt, y)
            out = (mat @ y.ravel() + shift).reshape(y.shape)
            if not np.all(np.isfinite(out)):
                raise NonFiniteState(f"non-finite state at t={t + dt:.6g}")
            return out
        mask = self.given_mask(y, t)
        k1 = self.rhs(y, t, mask)
        k2 = self.rhs(y + dt / 2 * k1, t + dt / 2, mask)
        k3 = self.rhs(y + dt / 2 * k2, t + dt / 2, mask)
        k4 = self.rhs(y + dt * k3, t + dt, mask)
        out = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if mask.any():
            exact = self.given_values(t + dt)
            out = np.where(mask & ~np.isnan(exact), exact, out)
        if not np.all(np.isfinite(out)):
            raise NonFiniteState(f"non-finite state at t={t + dt:.6g}")
        return out


def _payload(kind):
    return getattr(kind, "value", getattr(kind, "gradient", None))


def rhs(problem, grid, bounds, values, t, mask=None):
    """Semi-discrete time derivative on every node (given nodes included)."""
    return SemiDiscrete(problem, grid, bounds).rhs(np.asarray(values, dtype=float), t, mask)


def _diffusion_scale(problem, grid, values, t):
    """Largest row sum of the normal diffusion Jacobian blocks."""
    if problem.g_flux is None:
        return 0.0
    grad = central_gradient(grid, values)
    jac = problem.diffusion_jacobian(grad, grid.coords, t)
    worst = 0.0
    for j in range(grid.dims):
        worst = max(worst, float(np.abs(jac[:, j, j, :]).sum(axis=1).max()))
    return worst


def stable_dt(problem, grid, bounds, values, t) -> float:
    """``0.4 * min(dx / |v|max, dx^2 / (2 m Lambda_max))`` at the given state."""
    values = np.asarray(values, dtype=float)
    dx = min(grid.spacing)
    _, vel = upwind_state_gradient(problem, grid, values, t)
    vmax = float(np.abs(vel).max()) if vel.size else 0.0
    lam = _diffusion_scale(problem, grid, values, t)
    limits = [np.inf]
    if vmax > 0:
        limits.append(dx / vmax)
    if lam > 0:
        limits.append(dx**2 / (2 * grid.dims * lam))
    return CFL_SAFETY * min(limits)


def _check_cfl(plan, y, t, dt):
    limit = stable_dt(plan.problem, plan.grid, plan.bounds, y, t)
    if dt > limit * (1 + 1e-12):
        raise CflViolation(f"dt={dt:.3g} exceeds the stability limit {limit:.3g}", limit)


def step(problem, grid, bounds, state, t, dt, *, check_cfl=True):
    """One classical RK4 step; returns the new ``(n, N)`` values."""
    y = np.atleast_2d(np.asarray(getattr(state, "values", state), dtype=float))
    plan = SemiDiscrete(problem, grid, bounds)
    if check_cfl:
        _check_cfl(plan, y, t, dt)
    return plan.step(y, t, dt)


def _schedule(t0, t1, dt):
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    return n, (t1 - t0) / n


def run(problem, grid, bounds, init, t0, t1, dt=None, *, every=1, check_every=50):
    """Integrate from ``t0`` to ``t1`` keeping every ``every``-th step.

    ``dt`` is shrunk slightly so that an integer number of steps lands on
    ``t1``.  With ``dt=None`` the stability limit at the initial state is
    used.  The CFL guard is re-evaluated every ``check_every`` steps.
    """
    y = np.atleast_2d(np.asarray(getattr(init, "values", init), dtype=float)).copy()
    if dt is None:
        dt = stable_dt(problem, grid, bounds, y, t0)
    nsteps, h = _schedule(t0, t1, dt)
    times, snaps = [t0], [y.copy()]
    plan = SemiDiscrete(problem, grid, bounds)
    for k in range(nsteps):
        t = t0 + k * h
        if k % check_every == 0 and (k == 0 or not plan.is_affine):
            _check_cfl(plan, y, t, h)
        y = plan.step(y, t, h)
        if (k + 1) % every == 0 or k + 1 == nsteps:
            times.append(t0 + (k + 1) * h)
            snaps.append(y.copy())
    return Trajectory(np.array(times), np.array(snaps), grid)


def perturbation_experiment(problem, grid, bounds, init_a, init_b, t0, t1, dt=None, *, every=1):
    """Distance between two solutions started from ``init_a`` and ``init_b``."""
    a = np.atleast_2d(np.asarray(getattr(init_a, "values", init_a), dtype=float))
    b = np.atleast_2d(np.asarray(getattr(init_b, "values", init_b), dtype=float))
    if dt is None:
        dt = min(stable_dt(problem, grid, bounds, a, t0), stable_dt(problem, grid, bounds, b, t0))
    ta = run(problem, grid, bounds, a, t0, t1, dt, every=every)
    tb = run(problem, grid, bounds, b, t0, t1, dt, every=every)
    diff = ta.snapshots - tb.snapshots
    sq = np.sum(diff**2, axis=1)
    d2 = sq @ grid.trapezoid_weights
    discrete = sq.sum(axis=1) * grid.cell_volume
    return DecaySeries(ta.times, d2, discrete)


def fit_rate(series, window=None) -> RateFit:
    """Negated least-squares slope of ``log(d2) / 2`` against time."""
    t = series.times
    d2 = series.d2
    if window is not None:
        lo, hi = window
        sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
        t, d2 = t[sel], d2[sel]
    if t.size < 3:
        raise DegenerateSeries("fit window holds fewer than 3 samples")
    if np.any(d2 <= 0) or not np.all(np.isfinite(d2)):
        raise DegenerateSeries("d2 is zero (or not finite) inside the fit window")
    y = 0.5 * np.log(d2)
    if np.ptp(y) == 0:
        return RateFit(0.0, 1.0, float(y[0]), (float(t[0]), float(t[-1])))
    fit = stats.linregress(t, y)
    return RateFit(-float(fit.slope), float(fit.rvalue**2), float(fit.intercept), (float(t[0]), float(t[-1])))
