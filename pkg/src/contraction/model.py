"""Problem data model: PDE right-hand sides, derivatives, boundary data.

Problems have the general form

    d(phi_i)/dt + h_i(Phi, grad phi_i, x, t) + p_i = div G_i(grad Phi, x, t)

All callables are vectorised over grid nodes.  With ``n`` state components,
``m`` coordinates and ``N`` evaluation points the shapes are

    phi   (n, N)          state values
    grad  (n, m, N)       grad[i, j] = d phi_i / d x_j
    x     (m, N)          node coordinates
    h(phi, grad, x, t)             -> (n, N)
    dh_dPhi(phi, grad, x, t)       -> (n, n, N)
    dh_dGradPhi(phi, grad, x, t)   -> (n, m, N)    flow velocity of component i
    g_flux(grad, x, t)             -> (n, m, N)    G[i, j]
    dG_dGradPhi(grad, x, t)        -> (n, m, m, n, N)   dG_ij / d(grad_k phi_l)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import ConstraintError, DerivativeMismatch, MissingBoundaryData

__all__ = [
    "PdeProblem",
    "Dirichlet",
    "Neumann",
    "InflowGiven",
    "BoundarySpec",
    "ValidationReport",
    "validate_problem",
    "inflow_test",
    "fd_step",
]


def fd_step(value):
    """Central-difference step ``1e-6 * max(1, |value|)``."""
    return 1e-6 * np.maximum(1.0, np.abs(value))


@dataclass(frozen=True)
class PdeProblem:
    n_state: int
    n_coord: int
    h: Callable
    dh_dPhi: Callable
    dh_dGradPhi: Callable
    g_flux: Optional[Callable] = None
    dG_dGradPhi: Optional[Callable] = None
    lambda_bound: Optional[np.ndarray] = None
    constraint_projector: Optional[np.ndarray] = None
    name: str = ""
    # box used to draw random probe states, per component
    probe_low: tuple = ()
    probe_high: tuple = ()
    # h and G linear in (Phi, grad Phi) with time-invariant coefficients
    linear: bool = False

    def __post_init__(self):
        if self.n_state < 1 or self.n_coord < 1:
            raise ValueError("n_state and n_coord must be positive")
        if self.lambda_bound is not None:
            object.__setattr__(self, "lambda_bound", np.asarray(self.lambda_bound, dtype=float))
        if not self.probe_low:
            object.__setattr__(self, "probe_low", (-1.0,) * self.n_state)
        if not self.probe_high:
            object.__setattr__(self, "probe_high", (1.0,) * self.n_state)

    @property
    def has_diffusion(self) -> bool:
        return self.g_flux is not None

    def lambda_diag(self) -> np.ndarray:
        """Diagonal entries Lambda_ijij as an (n, m) array."""
        lam = self.lambda_bound
        if lam is None:
            raise ValueError("problem has no lambda_bound")
        n, m = self.n_state, self.n_coord
        if lam.ndim == 0:
            return np.full((n, m), float(lam))
        if lam.shape == (n, m):
            return lam.copy()
        if lam.shape == (n, m, m, n):
            out = np.empty((n, m))
            for i in range(n):
                for j in range(m):
                    out[i, j] = lam[i, j, j, i]
            return out
        raise ValueError(f"lambda_bound has shape {lam.shape}, expected (n, m) or (n, m, m, n)")

    def diffusion_jacobian(self, grad, x, t):
        """dG/d(grad Phi); finite differences of ``g_flux`` when no callable is set."""
        if self.dG_dGradPhi is not None:
            return np.asarray(self.dG_dGradPhi(grad, x, t), dtype=float)
        grad = np.asarray(grad, dtype=float)
        n, m = self.n_state, self.n_coord
        out = np.empty((n, m, m, n) + grad.shape[2:])
        for k in range(m):
            for l in range(n):
                step = fd_step(grad[l, k])
                gp = grad.copy()
                gm = grad.copy()
                gp[l, k] += step
                gm[l, k] -= step
                out[:, :, k, l] = (self.g_flux(gp, x, t) - self.g_flux(gm, x, t)) / (2 * step)
        return out


# ---------------------------------------------------------------------------
# boundary data


def _evaluate(value, x, t, n):
    """Broadcast a boundary value to an (n, K) array."""
    k = x.shape[1]
    if callable(value):
        out = np.asarray(value(x, t), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    if out.ndim == 0:
        return np.full((n, k), float(out))
    if out.ndim == 1 and out.shape[0] == n and k != n:
        return np.repeat(out[:, None], k, axis=1)
    if out.ndim == 1:
        return np.broadcast_to(out[None, :], (n, k)).copy()
    return np.broadcast_to(out, (n, k)).copy()


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed values ``value(x, t)`` on the whole face."""

    value: object = 0.0

    def evaluate(self, x, t, n):
        return _evaluate(self.value, x, t, n)


@dataclass(frozen=True)
class Neumann:
    """Prescribed outward normal derivative ``gradient(x, t)``."""

    gradient: object = 0.0

    def evaluate(self, x, t, n):
        return _evaluate(self.gradient, x, t, n)


@dataclass(frozen=True)
class InflowGiven:
    """Values prescribed only where the face is inflowing; zero flux elsewhere."""

    value: object = 0.0

    def evaluate(self, x, t, n):
        return _evaluate(self.value, x, t, n)


def inflow_test(velocity, side):
    """True where ``velocity . n < 0`` for a face with outward normal ``side * e_j``."""
    return side * np.asarray(velocity) < 0


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition per face name (``left``/``right``/``bottom``/``top``).

    Faces not listed carry no data; that is fine for outflow faces of a
    pure first-order problem.
    """

    faces: Mapping[str, object] = field(default_factory=dict)

    def kind(self, face):
        return self.faces.get(face)

    def axis_is_dirichlet(self, grid, axis) -> bool:
        names = [f for f in grid.faces if grid.face_axis(f)[0] == axis]
        return all(isinstance(self.kind(f), Dirichlet) for f in names)

    def inflow(self, grid, velocity):
        """Per face, a bool (n, K) array flagging inflowing nodes per component."""
        velocity = np.asarray(velocity)
        out = {}
        for face in grid.faces:
            axis, side = grid.face_axis(face)
            nodes = grid.face_nodes(face)
            out[face] = inflow_test(velocity[:, axis, nodes], side)
        return out

    def given_mask(self, grid, velocity, n_state=None):
        """(n, N) bool: nodes whose values are prescribed per component."""
        if velocity is None:
            n = n_state
            inflow = None
        else:
            velocity = np.asarray(velocity)
            n = velocity.shape[0]
            inflow = self.inflow(grid, velocity)
        mask = np.zeros((n, grid.size), dtype=bool)
        for face in grid.faces:
            kind = self.kind(face)
            nodes = grid.face_nodes(face)
            if isinstance(kind, Dirichlet):
                mask[:, nodes] = True
            elif isinstance(kind, InflowGiven) and inflow is not None:
                mask[:, nodes] |= inflow[face]
        return mask

    def missing_inflow(self, grid, velocity):
        """Faces (and components) where inflowing nodes have no value attached."""
        velocity = np.asarray(velocity)
        given = self.given_mask(grid, velocity)
        inflow = self.inflow(grid, velocity)
        missing = []
        for face in grid.faces:
            nodes = grid.face_nodes(face)
            bad = inflow[face] & ~given[:, nodes]
            for i in np.flatnonzero(bad.any(axis=1)):
                missing.append((face, int(i)))
        return missing

    def given_values(self, grid, t, n):
        """(n, N) array holding prescribed values (NaN where nothing is prescribed)."""
        out = np.full((n, grid.size), np.nan)
        # InflowGiven first so Dirichlet wins at shared corners
        for cls in (InflowGiven, Dirichlet):
            for face in grid.faces:
                kind = self.kind(face)
                if isinstance(kind, cls):
                    nodes = grid.face_nodes(face)
                    out[:, nodes] = kind.evaluate(grid.coords[:, nodes], t, n)
        return out

    def check_diffusive(self, grid):
        """Second-order terms need value or gradient data on every face."""
        bare = [f for f in grid.faces if self.kind(f) is None]
        if bare:
            raise MissingBoundaryData(
                "diffusion requires Dirichlet, Neumann or inflow data on faces " + ", ".join(bare),
                faces=bare,
            )


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    residuals: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def summary(self) -> str:
        lines = [f"{k}: residual {v:.3g}" for k, v in self.residuals.items()]
        lines += [f"{k}: {v}" for k, v in self.boundary.items()]
        lines += [f"ISSUE {s}" for s in self.issues]
        return "\n".join(lines)


def _random_probe(problem, grid, rng):
    lo = np.asarray(problem.probe_low, dtype=float)[:, None]
    hi = np.asarray(problem.probe_high, dtype=float)[:, None]
    phi = lo + (hi - lo) * rng.random((problem.n_state, grid.size))
    grad = rng.uniform(-1.0, 1.0, (problem.n_state, problem.n_coord, grid.size))
    return phi, grad


def _relative(resid, ref):
    return resid / max(1.0, float(np.max(np.abs(ref)))) if np.size(ref) else 0.0


def check_derivatives(problem, grid, t, rng):
    """Absolute residuals and their relative sizes for every supplied derivative."""
    x = grid.coords
    phi, grad = _random_probe(problem, grid, rng)
    n, m = problem.n_state, problem.n_coord
    out = {}

    jac = np.asarray(problem.dh_dPhi(phi, grad, x, t), dtype=float)
    fd = np.empty_like(jac)
    for l in range(n):
        step = fd_step(phi[l])
        pp, pm = phi.copy(), phi.copy()
        pp[l] += step
        pm[l] -= step
        fd[:, l] = (problem.h(pp, grad, x, t) - problem.h(pm, grad, x, t)) / (2 * step)
    r = float(np.max(np.abs(jac - fd)))
    out["dh_dPhi"] = (r, _relative(r, fd))

    vel = np.asarray(problem.dh_dGradPhi(phi, grad, x, t), dtype=float)
    fd = np.empty_like(vel)
    for i in range(n):
        for j in range(m):
            step = fd_step(grad[i, j])
            gp, gm = grad.copy(), grad.copy()
            gp[i, j] += step
            gm[i, j] -= step
            fd[i, j] = (problem.h(phi, gp, x, t)[i] - problem.h(phi, gm, x, t)[i]) / (2 * step)
    r = float(np.max(np.abs(vel - fd)))
    out["dh_dGradPhi"] = (r, _relative(r, fd))

    if problem.g_flux is not None and problem.dG_dGradPhi is not None:
        jac = np.asarray(problem.dG_dGradPhi(grad, x, t), dtype=float)
        fd = np.empty_like(jac)
        for k in range(m):
            for l in range(n):
                step = fd_step(grad[l, k])
                gp, gm = grad.copy(), grad.copy()
                gp[l, k] += step
                gm[l, k] -= step
                fd[:, :, k, l] = (problem.g_flux(gp, x, t) - problem.g_flux(gm, x, t)) / (2 * step)
        r = float(np.max(np.abs(jac - fd)))
        out["dG_dGradPhi"] = (r, _relative(r, fd))
    return out


def check_linearity(problem, grid, t, rng):
    """Relative superposition and time-shift defect of ``h`` (and ``G``)."""
    x = grid.coords
    p1, g1 = _random_probe(problem, grid, rng)
    p2, g2 = _random_probe(problem, grid, rng)
    z_p, z_g = np.zeros_like(p1), np.zeros_like(g1)
    worst = 0.0

    def defect(f, args1, args2, zero):
        a = np.asarray(f(*[u + 2.0 * v for u, v in zip(args1, args2)]), dtype=float)
        b = np.asarray(f(*args1), dtype=float) + 2.0 * np.asarray(f(*args2), dtype=float)
        b = b - 2.0 * np.asarray(f(*zero), dtype=float)
        return float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(a))))

    h = lambda p, g: problem.h(p, g, x, t)
    worst = max(worst, defect(h, (p1, g1), (p2, g2), (z_p, z_g)))
    shift = np.asarray(problem.h(p1, g1, x, t + 1.0)) - np.asarray(problem.h(p1, g1, x, t))
    worst = max(worst, float(np.max(np.abs(shift))))
    if problem.g_flux is not None:
        g = lambda gg: problem.g_flux(gg, x, t)
        worst = max(worst, defect(g, (g1,), (g2,), (z_g,)))
        shift = np.asarray(problem.g_flux(g1, x, t + 1.0)) - np.asarray(problem.g_flux(g1, x, t))
        worst = max(worst, float(np.max(np.abs(shift))))
    return worst


def check_projector(P, n):
    if callable(P):
        raise ConstraintError("only constant linear constraints (a projector matrix) are supported")
    P = np.asarray(P, dtype=float)
    if P.shape != (n, n):
        raise ConstraintError(f"projector must be {n}x{n}, got {P.shape}")
    if np.max(np.abs(P - P.T)) > 1e-10:
        raise ConstraintError("projector is not symmetric")
    if np.max(np.abs(P @ P - P)) > 1e-10:
        raise ConstraintError("projector is not idempotent")
    return P


def validate_problem(problem, grid, bounds, t=0.0, *, state=None, seed=0, tol=1e-5,
                     raise_errors=True):
    """Cross-check derivatives and boundary coverage of ``problem`` on ``grid``.

    Parameters
    ----------
    state : array (n, N), optional
        State at which state-dependent velocities are evaluated for the
        inflow test.  Defaults to the centre of the probe box.
    raise_errors : bool
        Raise the first error found instead of only recording it.
    """
    from .grid import state_velocity

    rng = np.random.default_rng(seed)
    report = ValidationReport()
    x = grid.coords

    derivs = check_derivatives(problem, grid, t, rng)
    for name, (resid, rel) in derivs.items():
        report.residuals[name] = resid
        if rel > tol:
            msg = f"{name} disagrees with finite differences (residual {resid:.3g})"
            report.issues.append(msg)
            if raise_errors:
                raise DerivativeMismatch(msg, resid)

    if problem.linear:
        resid = check_linearity(problem, grid, t, rng)
        report.residuals["linearity"] = resid
        if resid > tol:
            msg = f"problem is flagged linear but superposition fails (residual {resid:.3g})"
            report.issues.append(msg)
            if raise_errors:
                raise ValueError(msg)

    if problem.lambda_bound is not None:
        lam = problem.lambda_bound
        if np.any(lam < 0):
            report.issues.append("lambda_bound has negative entries")
        if lam.ndim == 4:
            n, m = problem.n_state, problem.n_coord
            off = lam.copy()
            for i in range(n):
                for j in range(m):
                    off[i, j, j, i] = 0.0
            if np.any(off != 0):
                report.issues.append("lambda_bound must vanish off the ij == kl diagonal")
        if raise_errors and report.issues:
            raise ValueError(report.issues[-1])

    if problem.constraint_projector is not None:
        check_projector(problem.constraint_projector, problem.n_state)

    if state is None:
        mid = 0.5 * (np.asarray(problem.probe_low) + np.asarray(problem.probe_high))
        state = np.repeat(mid[:, None], grid.size, axis=1)
    state = np.asarray(state, dtype=float)
    vel = state_velocity(problem, grid, state, t)
    inflow = bounds.inflow(grid, vel)
    missing = bounds.missing_inflow(grid, vel)
    for face in grid.faces:
        nodes = grid.face_nodes(face)
        kind = bounds.kind(face)
        status = type(kind).__name__ if kind is not None else "none"
        if inflow[face].any():
            status += ", inflowing"
        report.boundary[face] = status
    if missing:
        faces = sorted({f for f, _ in missing})
        msg = "inflowing face without boundary values: " + ", ".join(faces)
        report.issues.append(msg)
        if raise_errors:
            raise MissingBoundaryData(msg, faces=faces)
    if problem.has_diffusion:
        try:
            bounds.check_diffusive(grid)
        except MissingBoundaryData as exc:
            report.issues.append(str(exc))
            if raise_errors:
                raise
    return report
