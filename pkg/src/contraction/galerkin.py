"""Galerkin approximation ``Phi ~ w(x, t) a`` with the residual kept orthogonal to the basis.

All integrals use the trapezoidal weights of the quadrature grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateBasis, NonFiniteState
from .grid import Field
from .io import write_csv
from .model import Dirichlet, InflowGiven, Neumann

__all__ = [
    "BasisFunction",
    "BasisSet",
    "mass_matrix",
    "project_dynamics",
    "add_basis",
    "remove_basis",
    "reconstruct",
    "project_field",
    "GalerkinRun",
    "galerkin_run",
    "sine_modes",
    "inflow_cosine_modes",
    "gaussian_bumps",
    "make_basis",
]

COND_LIMIT = 1e12


@dataclass(frozen=True)
class BasisFunction:
    """One column of ``w``: values (n, N), gradients (n, m, N) and optional time derivative."""

    value: Callable
    grad: Callable
    dt: Optional[Callable] = None
    name: str = ""

    def values(self, x, t, n):
        return _shape(self.value(x, t), n, x.shape[1])

    def grads(self, x, t, n):
        g = np.asarray(self.grad(x, t), dtype=float)
        m, N = x.shape
        if g.ndim == 2:
            g = np.broadcast_to(g[None], (n, m, N)) if n == 1 else g.reshape(n, m, N)
        return np.asarray(g, dtype=float).reshape(n, m, N)

    def rates(self, x, t, n):
        if self.dt is None:
            return np.zeros((n, x.shape[1]))
        return _shape(self.dt(x, t), n, x.shape[1])


def _shape(v, n, N):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    return np.broadcast_to(v, (n, N)).copy() if v.shape[0] == 1 and n > 1 else v.reshape(n, N)


@dataclass(frozen=True)
class BasisSet:
    functions: tuple
    coeffs: np.ndarray
    grid: object
    n_state: int = 1

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if coeffs.shape != (len(self.functions),):
            raise ValueError(f"{len(self.functions)} functions but {coeffs.size} coefficients")
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def size(self):
        return len(self.functions)

    def with_coeffs(self, coeffs) -> "BasisSet":
        return replace(self, coeffs=coeffs)

    def matrix(self, t=0.0):
        """Basis values stacked as (K, n, N)."""
        x = self.grid.coords
        if not self.functions:
            return np.zeros((0, self.n_state, self.grid.size))
        return np.array([f.values(x, t, self.n_state) for f in self.functions])

    def gradients(self, t=0.0):
        x = self.grid.coords
        if not self.functions:
            return np.zeros((0, self.n_state, self.grid.dims, self.grid.size))
        return np.array([f.grads(x, t, self.n_state) for f in self.functions])

    def rates(self, t=0.0):
        x = self.grid.coords
        if not self.functions:
            return np.zeros((0, self.n_state, self.grid.size))
        return np.array([f.rates(x, t, self.n_state) for f in self.functions])


def _gram(grid, W, V):
    """``int W_k^T V_l dV`` for stacks of shape (K, n, N) and (L, n, N)."""
    return np.einsum("kin,lin,n->kl", W, V, grid.trapezoid_weights)


def mass_matrix(basis: BasisSet, t=0.0) -> np.ndarray:
    """``int w^T w dV``; raises :class:`DegenerateBasis` above condition number 1e12."""
    W = basis.matrix(t)
    M = _gram(basis.grid, W, W)
    if M.size:
        eig = np.linalg.eigvalsh(0.5 * (M + M.T))
        if eig[0] <= 0 or eig[-1] / eig[0] > COND_LIMIT:
            raise DegenerateBasis("basis functions are (numerically) linearly dependent")
    return M


def reconstruct(basis: BasisSet, t=0.0) -> Field:
    """The field ``w a`` on the quadrature grid."""
    W = basis.matrix(t)
    return Field(basis.grid, np.einsum("k,kin->in", basis.coeffs, W).reshape(basis.n_state, -1))


def project_field(basis: BasisSet, values, t=0.0) -> np.ndarray:
    """L2-orthogonal projection coefficients of a grid field."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    W = basis.matrix(t)
    M = mass_matrix(basis, t)
    rhs = np.einsum("kin,in,n->k", W, values, basis.grid.trapezoid_weights)
    return np.linalg.solve(M, rhs)


def _check_vanishing(basis, bounds, W, vel, tol=1e-8):
    grid = basis.grid
    inflow = bounds.inflow(grid, vel) if vel is not None else {}
    for face in grid.faces:
        kind = bounds.kind(face)
        nodes = grid.face_nodes(face)
        if isinstance(kind, Dirichlet):
            sel = np.ones((basis.n_state, nodes.size), dtype=bool)
        elif isinstance(kind, InflowGiven) and face in inflow:
            sel = inflow[face]
        else:
            continue
        vals = W[:, :, nodes]
        if np.any(np.abs(vals[:, sel]) > tol):
            raise ValueError(f"basis functions must vanish on the {face} face where values are prescribed")


def _boundary_flux(problem, basis, bounds, W, grad_phi, t):
    """``sum_faces int w_k^T (G . n) dS`` over Neumann faces."""
    grid = basis.grid
    n, m = basis.n_state, grid.dims
    out = np.zeros(basis.size)
    for face in grid.faces:
        kind = bounds.kind(face)
        if not isinstance(kind, Neumann):
            continue
        axis, side = grid.face_axis(face)
        nodes = grid.face_nodes(face)
        xb = grid.coords[:, nodes]
        q = kind.evaluate(xb, t, n)
        gb = grad_phi[:, :, nodes].copy()
        gb[:, axis] = side * q
        flux_n = side * np.asarray(problem.g_flux(gb, xb, t))[:, axis]  # (n, K_face)
        if m == 1:
            weights = np.ones(1)
        else:
            other = 1 - axis
            d = grid.spacing[other]
            weights = np.full(nodes.size, d)
            weights[0] = weights[-1] = d / 2
        out += np.einsum("kin,in,n->k", W[:, :, nodes], flux_n, weights)
    return out


def project_dynamics(problem, basis: BasisSet, t=0.0, bounds=None, coeffs=None) -> np.ndarray:
    """Coefficient derivative from the orthogonality condition.

    Solves ``M a' = -int w^T (h(w a, grad(w a)) + w_t a) dV - int grad w : G dV
    + boundary flux``, the diffusion term integrated by parts once.
    """
    grid = basis.grid
    a = basis.coeffs if coeffs is None else np.asarray(coeffs, dtype=float)
    if basis.size == 0:
        return np.zeros(0)
    W = basis.matrix(t)
    dW = basis.gradients(t)
    M = mass_matrix(basis, t)
    x = grid.coords
    phi = np.einsum("k,kin->in", a, W)
    grad = np.einsum("k,kijn->ijn", a, dW)
    if bounds is not None:
        vel = np.asarray(problem.dh_dGradPhi(phi, grad, x, t), dtype=float)
        _check_vanishing(basis, bounds, W, vel)
    resid = np.asarray(problem.h(phi, grad, x, t), dtype=float)
    resid = resid + np.einsum("k,kin->in", a, basis.rates(t))
    rhs = -np.einsum("kin,in,n->k", W, resid, grid.trapezoid_weights)
    if problem.g_flux is not None:
        G = np.asarray(problem.g_flux(grad, x, t), dtype=float)
        rhs -= np.einsum("kijn,ijn,n->k", dW, G, grid.trapezoid_weights)
        if bounds is not None:
            rhs += _boundary_flux(problem, basis, bounds, W, grad, t)
    return np.linalg.solve(M, rhs)


def add_basis(basis: BasisSet, w_new: BasisFunction, t=0.0) -> BasisSet:
    """Append ``w_new`` with a zero coefficient; the reconstruction is unchanged."""
    out = BasisSet(basis.functions + (w_new,), np.append(basis.coeffs, 0.0), basis.grid, basis.n_state)
    mass_matrix(out, t)
    return out


def remove_basis(basis: BasisSet, index, t=0.0):
    """Drop function ``index``; returns ``(reduced set, ||w_i a_i||_2)``."""
    if not 0 <= index < basis.size:
        raise IndexError(f"basis index {index} out of range for {basis.size} functions")
    w = basis.functions[index].values(basis.grid.coords, t, basis.n_state) * basis.coeffs[index]
    disturbance = float(np.sqrt(np.sum(w**2, axis=0) @ basis.grid.trapezoid_weights))
    keep = [k for k in range(basis.size) if k != index]
    reduced = BasisSet(
        tuple(basis.functions[k] for k in keep), basis.coeffs[keep], basis.grid, basis.n_state
    )
    return reduced, disturbance


@dataclass(frozen=True)
class GalerkinRun:
    times: np.ndarray
    coeffs: np.ndarray  # (T, K)
    mass: np.ndarray

    def to_csv(self, path, rates=None):
        K = self.coeffs.shape[1]
        header = ["t"] + [f"a{k}" for k in range(K)]
        cols = [self.times[:, None], self.coeffs]
        if rates is not None:
            header += [f"adot{k}" for k in range(K)]
            cols.append(rates)
        return write_csv(path, header, np.hstack(cols))

    def distance(self, other) -> np.ndarray:
        """``(a1 - a2)^T M (a1 - a2)`` over time."""
        d = self.coeffs - other.coeffs
        return np.einsum("tk,kl,tl->t", d, self.mass, d)


def galerkin_run(problem, basis: BasisSet, t0, t1, dt, bounds=None) -> GalerkinRun:
    """RK4 integration of the coefficient dynamics (static basis assumed for ``mass``)."""
    n = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    a = basis.coeffs.copy()
    f = lambda s, c: project_dynamics(problem, basis, s, bounds, c)
    times, hist = [t0], [a]
    for k in range(n):
        t = t0 + k * h
        k1 = f(t, a)
        k2 = f(t + h / 2, a + h / 2 * k1)
        k3 = f(t + h / 2, a + h / 2 * k2)
        k4 = f(t + h, a + h * k3)
        a = a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(a)):
            raise NonFiniteState(f"coefficients escaped at t={t + h:.6g}")
        times.append(t0 + (k + 1) * h)
        hist.append(a)
    return GalerkinRun(np.array(times), np.array(hist), mass_matrix(basis, t0))


# ---------------------------------------------------------------------------
# named families


def sine_modes(k_max, length, origin=0.0, scale=1.0):
    """``sin(k pi (x - origin) / length)`` for ``k = 1..k_max``; zero at both ends."""
    out = []
    for k in range(1, k_max + 1):
        w = k * np.pi / length
        out.append(BasisFunction(
            lambda x, t, w=w: scale * np.sin(w * (x[0] - origin)),
            lambda x, t, w=w: scale * w * np.cos(w * (x[0] - origin))[None],
            name=f"sin{k}",
        ))
    return out


def inflow_cosine_modes(k_max, length, origin=0.0):
    """``cos((k - 1/2) pi (x - origin) / length)``; zero at the right end only."""
    out = []
    for k in range(1, k_max + 1):
        w = (k - 0.5) * np.pi / length
        out.append(BasisFunction(
            lambda x, t, w=w: np.cos(w * (x[0] - origin)),
            lambda x, t, w=w: -w * np.sin(w * (x[0] - origin))[None],
            name=f"cos{k}",
        ))
    return out


def gaussian_bumps(centers, width):
    out = []
    for c in np.atleast_1d(centers):
        out.append(BasisFunction(
            lambda x, t, c=c: np.exp(-((x[0] - c) ** 2) / (2 * width**2)),
            lambda x, t, c=c: (-(x[0] - c) / width**2 * np.exp(-((x[0] - c) ** 2) / (2 * width**2)))[None],
            name=f"gauss{c:g}",
        ))
    return out


def make_basis(family, grid, size, coeffs=None, **params) -> BasisSet:
    """Basis set from a named family: ``sine``, ``inflow_cosine`` or ``gaussian``."""
    length = grid.lengths[0]
    origin = grid.origin[0] if grid.origin else 0.0
    if family == "sine":
        funcs = sine_modes(size, length, origin)
    elif family == "inflow_cosine":
        funcs = inflow_cosine_modes(size, length, origin)
    elif family == "gaussian":
        centers = params.get("centers")
        if centers is None:
            centers = origin + np.linspace(0, length, size + 2)[1:-1]
        funcs = gaussian_bumps(centers, params.get("width", length / (2 * size + 2)))
    else:
        raise ValueError(f"unknown basis family {family!r}")
    coeffs = np.zeros(len(funcs)) if coeffs is None else coeffs
    return BasisSet(tuple(funcs), coeffs, grid, params.get("n_state", 1))
