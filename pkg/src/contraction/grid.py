"""Rectangular grids and the discrete convection/diffusion operators.

Convection is differenced upwind: one-sided against the local velocity
component, forward where the component is exactly zero.  Nodes whose
values are prescribed (Dirichlet faces, inflowing nodes of inflow faces)
are removed from the operators by deleting their row and column.

The diffusion operator is written in flux form: face fluxes use the
two-point difference across the face, so the transpose of the left
difference is the negative right difference and the linearised operator
is symmetric on non-Dirichlet nodes.  Neumann faces use a one-sided ghost
node carrying the prescribed outward normal gradient.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import MissingBoundaryData, ShapeMismatch
from .model import Dirichlet, InflowGiven, Neumann

__all__ = [
    "Grid",
    "Field",
    "central_gradient",
    "upwind_gradient",
    "probe_gradient",
    "state_velocity",
    "upwind_state_gradient",
    "ConvectionOperator",
    "assemble_convection_matrix",
    "upwind_divergence",
    "PsdResult",
    "upwind_psd_check",
    "min_symmetric_eigenvalue",
    "DiffusionOperator",
    "diffusion_matrix",
    "diffusion_divergence",
]

_FACES = {"left": (0, -1), "right": (0, 1), "bottom": (1, -1), "top": (1, 1)}


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid in 1-D or 2-D.

    Nodes are flattened in C order, so with ``shape == (n0, n1)`` node
    ``(i, j)`` has flat index ``i * n1 + j`` and axis 0 is ``x``.
    """

    lengths: tuple
    n_nodes: tuple
    origin: tuple = ()

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        n_nodes = tuple(int(v) for v in np.atleast_1d(self.n_nodes))
        if len(lengths) not in (1, 2) or len(lengths) != len(n_nodes):
            raise ValueError("grid must be 1-D or 2-D with one node count per axis")
        if any(v <= 0 for v in lengths):
            raise ValueError("lengths must be positive")
        if any(v < 3 for v in n_nodes):
            raise ValueError("need at least 3 nodes per axis")
        origin = tuple(float(v) for v in np.atleast_1d(self.origin)) if self.origin else (0.0,) * len(lengths)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "n_nodes", n_nodes)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> int:
        return len(self.lengths)

    @property
    def shape(self) -> tuple:
        return self.n_nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.n_nodes))

    @property
    def spacing(self) -> tuple:
        return tuple(l / (n - 1) for l, n in zip(self.lengths, self.n_nodes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def faces(self) -> tuple:
        return ("left", "right") if self.dims == 1 else ("left", "right", "bottom", "top")

    @staticmethod
    def face_axis(face):
        """(axis, side) of a face; side is the sign of its outward normal."""
        return _FACES[face]

    def axis_coords(self, axis) -> np.ndarray:
        return self.origin[axis] + np.linspace(0.0, self.lengths[axis], self.n_nodes[axis])

    @cached_property
    def coords(self) -> np.ndarray:
        axes = [self.axis_coords(j) for j in range(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh])

    @cached_property
    def _index(self) -> np.ndarray:
        return np.arange(self.size).reshape(self.shape)

    def face_nodes(self, face) -> np.ndarray:
        axis, side = _FACES[face]
        idx = np.take(self._index, 0 if side < 0 else -1, axis=axis)
        return idx.ravel()

    def stride(self, axis) -> int:
        return int(np.prod(self.shape[axis + 1:]))

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.ones(self.shape)
        for j, d in enumerate(self.spacing):
            wj = np.full(self.shape[j], d)
            wj[0] = wj[-1] = d / 2
            shape = [1] * self.dims
            shape[j] = -1
            w = w * wj.reshape(shape)
        return w.ravel()

    def integrate(self, values) -> np.ndarray:
        """Trapezoidal integral over the grid of the last axis of ``values``."""
        return np.asarray(values) @ self.trapezoid_weights

    def refined(self) -> "Grid":
        """Same domain with the spacing halved."""
        return Grid(self.lengths, tuple(2 * n - 1 for n in self.n_nodes), self.origin)

    def reshape(self, values):
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.shape)


@dataclass(frozen=True)
class Field:
    """State values on a grid, ``values.shape == (n_state, grid.size)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[-1] != self.grid.size:
            raise ShapeMismatch(f"field has {values.shape[-1]} nodes, grid has {self.grid.size}")
        object.__setattr__(self, "values", values)

    @property
    def n_state(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path, names=None):
        from .io import write_csv

        coord_names = ["x", "y"][: self.grid.dims]
        names = names or [f"phi{i}" for i in range(self.n_state)]
        rows = np.vstack([self.grid.coords, self.values]).T
        write_csv(path, coord_names + list(names), rows)

    @classmethod
    def from_csv(cls, path, grid):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = np.array([[float(v) for v in row] for row in reader])
        return cls(grid, rows[:, grid.dims:].T)


# ---------------------------------------------------------------------------
# gradients


def central_gradient(grid, values) -> np.ndarray:
    """Second-order gradient, shape ``values.shape[:-1] + (m, N)``."""
    values = np.asarray(values, dtype=float)
    u = grid.reshape(values)
    lead = values.ndim - 1
    parts = [
        np.gradient(u, grid.spacing[j], axis=lead + j, edge_order=2).reshape(values.shape)
        for j in range(grid.dims)
    ]
    return np.stack(parts, axis=lead)


def _one_sided(grid, values, axis):
    """Backward and forward differences; at the domain edge the inward one is reused."""
    u = np.moveaxis(grid.reshape(values), values.ndim - 1 + axis, -1)
    d = np.diff(u, axis=-1) / grid.spacing[axis]
    back = np.concatenate([d[..., :1], d], axis=-1)
    fwd = np.concatenate([d, d[..., -1:]], axis=-1)
    unmove = lambda a: np.moveaxis(a, -1, values.ndim - 1 + axis).reshape(values.shape)
    return unmove(back), unmove(fwd)


def upwind_gradient(grid, values, velocity, axis) -> np.ndarray:
    """One-sided difference along ``axis`` taken against the local velocity.

    ``velocity`` is the axis component, broadcastable to ``values``.  Where
    it is positive the backward difference is used, elsewhere the forward
    one.  At the domain edge, where the stencil would leave the grid, the
    inward difference is used instead.
    """
    values = np.asarray(values, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if values.shape[-1] != grid.size:
        raise ShapeMismatch(f"values have {values.shape[-1]} nodes, grid has {grid.size}")
    try:
        np.broadcast_shapes(velocity.shape, values.shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    back, fwd = _one_sided(grid, values, axis)
    return np.where(velocity > 0, back, fwd)


def probe_gradient(grid, values) -> np.ndarray:
    """Mean of backward and forward differences, shape (n, m, N).

    Central in the interior and one-sided at the edges; this is the
    gradient at which state-dependent velocities are evaluated.
    """
    values = np.asarray(values, dtype=float)
    parts = []
    for j in range(grid.dims):
        back, fwd = _one_sided(grid, values, j)
        parts.append(0.5 * (back + fwd))
    return np.stack(parts, axis=values.ndim - 1)


def state_velocity(problem, grid, values, t) -> np.ndarray:
    """Flow velocity (n, m, N) evaluated at :func:`probe_gradient`."""
    grad = probe_gradient(grid, values)
    return np.asarray(problem.dh_dGradPhi(values, grad, grid.coords, t), dtype=float)


def upwind_state_gradient(problem, grid, values, t):
    """Upwind gradient of every component, and the velocity that picked it."""
    values = np.asarray(values, dtype=float)
    sides = [_one_sided(grid, values, j) for j in range(grid.dims)]
    probe = np.stack([0.5 * (b + f) for b, f in sides], axis=1)
    vel = np.asarray(problem.dh_dGradPhi(values, probe, grid.coords, t), dtype=float)
    grad = np.stack([np.where(vel[:, j] > 0, b, f) for j, (b, f) in enumerate(sides)], axis=1)
    return grad, vel


def _velocity_at(problem, grid, t, state):
    if state is None:
        mid = 0.5 * (np.asarray(problem.probe_low) + np.asarray(problem.probe_high))
        state = np.repeat(mid[:, None], grid.size, axis=1)
    return state_velocity(problem, grid, np.asarray(state, dtype=float), t)


# ---------------------------------------------------------------------------
# convection


@dataclass(frozen=True)
class ConvectionOperator:
    """Per-component upwind matrices restricted to the free nodes ``kept[i]``."""

    matrices: list
    kept: list
    given: np.ndarray


def _convection_full(grid, vel_i):
    """Upwind matrix on all nodes for one component; entries leaving the grid dropped."""
    rows, cols, data = [], [], []
    idx = np.arange(grid.size)
    multi = np.unravel_index(idx, grid.shape)
    for j in range(grid.dims):
        v = vel_i[j]
        d = grid.spacing[j]
        s = grid.stride(j)
        pos = (v > 0) & (multi[j] > 0)
        neg = (v < 0) & (multi[j] < grid.shape[j] - 1)
        k = idx[pos]
        rows += [k, k]
        cols += [k - s, k]
        data += [-v[pos] / d, v[pos] / d]
        k = idx[neg]
        rows += [k, k]
        cols += [k, k + s]
        data += [-v[neg] / d, v[neg] / d]
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    return sp.csr_matrix(
        (np.concatenate(data), (rows, np.concatenate(cols))), shape=(grid.size, grid.size)
    )


def _require_inflow_data(grid, bounds, vel):
    missing = bounds.missing_inflow(grid, vel)
    if missing:
        faces = sorted({f for f, _ in missing})
        raise MissingBoundaryData("inflowing face without boundary values: " + ", ".join(faces), faces)


def assemble_convection_matrix(problem, grid, bounds, t, state=None) -> ConvectionOperator:
    """Upwind convection matrices ``C_i`` with ``C_i u = sum_j v_ij * grad_j u``."""
    vel = _velocity_at(problem, grid, t, state)
    _require_inflow_data(grid, bounds, vel)
    given = bounds.given_mask(grid, vel)
    mats, kept = [], []
    for i in range(problem.n_state):
        keep = np.flatnonzero(~given[i])
        full = _convection_full(grid, vel[i])
        mats.append(full[keep][:, keep].tocsr())
        kept.append(keep)
    return ConvectionOperator(mats, kept, given)


def upwind_divergence(grid, vel_i) -> np.ndarray:
    """Divergence of one component's velocity with the stencils matched to upwinding.

    Forward difference of the positive part minus backward difference of
    the negative part; contributions from outside the grid are dropped.
    """
    div = np.zeros(grid.size)
    for j in range(grid.dims):
        d = grid.spacing[j]
        vp = grid.reshape(np.maximum(vel_i[j], 0.0))
        vm = grid.reshape(np.maximum(-vel_i[j], 0.0))
        vp = np.moveaxis(vp, j, -1)
        vm = np.moveaxis(vm, j, -1)
        acc = -vp - vm
        acc[..., :-1] += vp[..., 1:]
        acc[..., 1:] += vm[..., :-1]
        div += np.moveaxis(acc, -1, j).ravel() / d
    return div


@dataclass(frozen=True)
class PsdResult:
    is_psd: bool
    min_eig: float
    per_component: tuple


def min_symmetric_eigenvalue(matrix, dense_limit=1500) -> float:
    """Smallest eigenvalue of a sparse symmetric matrix.

    Small matrices go through a dense solver.  Larger ones use shift-invert
    Lanczos with the shift placed below a Gershgorin lower bound, so the
    eigenvalue nearest the shift is the smallest one.
    """
    n = matrix.shape[0]
    if n == 0:
        return 0.0
    if n <= dense_limit:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
        return float(scipy.linalg.eigvalsh(dense, subset_by_index=[0, 0])[0])
    m = sp.csc_matrix(matrix)
    diag = m.diagonal()
    radius = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(diag)
    sigma = float(np.min(diag - radius)) - 1.0
    vals = spla.eigsh(m, k=1, sigma=sigma, which="LM", return_eigenvectors=False, tol=1e-14)
    return float(vals[0])


def upwind_psd_check(problem, grid, bounds, t, state=None, tol=1e-10) -> PsdResult:
    """Minimum eigenvalue of ``sym(C_i) + diag(div_i / 2)`` over components.

    ``div_i`` is :func:`upwind_divergence`; the diagonal it produces is the
    lower-bounding matrix of the upwind discretisation, so the result is
    PSD for every velocity field.
    """
    vel = _velocity_at(problem, grid, t, state)
    _require_inflow_data(grid, bounds, vel)
    given = bounds.given_mask(grid, vel)
    mins = []
    for i in range(problem.n_state):
        full = _convection_full(grid, vel[i])
        m = 0.5 * (full + full.T) + sp.diags(0.5 * upwind_divergence(grid, vel[i]))
        keep = np.flatnonzero(~given[i])
        mins.append(min_symmetric_eigenvalue(m.tocsr()[keep][:, keep]))
    lo = min(mins)
    return PsdResult(lo >= -tol, lo, tuple(mins))


# ---------------------------------------------------------------------------
# diffusion


@dataclass(frozen=True)
class DiffusionOperator:
    """Linearised diffusion on free nodes; rows/cols ordered component-major.

    ``kept`` holds flat indices ``i * N + k`` into the full (n*N) vector.
    """

    matrix: sp.csr_matrix
    kept: np.ndarray


def _dirichlet_mask(grid, bounds):
    mask = np.zeros(grid.size, dtype=bool)
    for face in grid.faces:
        if isinstance(bounds.kind(face), Dirichlet):
            mask[grid.face_nodes(face)] = True
    return mask


def _face_data(grid, values, axis, grad_c):
    """Face-centred gradients and coordinates for faces normal to ``axis``."""
    n = values.shape[0]
    m = grid.dims
    u = np.moveaxis(grid.reshape(values), 1 + axis, -1)
    normal = np.diff(u, axis=-1) / grid.spacing[axis]
    gc = np.moveaxis(grid.reshape(grad_c), 2 + axis, -1)
    gface = 0.5 * (gc[..., 1:] + gc[..., :-1])
    gface[:, axis] = normal
    x = np.moveaxis(grid.reshape(grid.coords), 1 + axis, -1)
    xface = 0.5 * (x[..., 1:] + x[..., :-1])
    return gface.reshape(n, m, -1), xface.reshape(m, -1), gface.shape[2:]


def diffusion_divergence(problem, grid, bounds, values, t) -> np.ndarray:
    """Discrete ``div G(grad Phi)`` at every node, shape (n, N).

    Values returned at Dirichlet nodes are meaningless; callers overwrite them.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    out = np.zeros_like(values)
    if problem.g_flux is None:
        return out
    bounds.check_diffusive(grid)
    grad_c = central_gradient(grid, values)
    for j in range(grid.dims):
        d = grid.spacing[j]
        gface, xface, fshape = _face_data(grid, values, j, grad_c)
        flux = np.asarray(problem.g_flux(gface, xface, t))[:, j].reshape((n,) + fshape)
        div = np.zeros(flux.shape[:-1] + (flux.shape[-1] + 1,))
        div[..., :-1] += flux
        div[..., 1:] -= flux
        div = np.moveaxis(div, -1, 1 + j).reshape(n, -1)
        # boundary ghost fluxes
        for face in grid.faces:
            axis, side = grid.face_axis(face)
            if axis != j:
                continue
            kind = bounds.kind(face)
            if not isinstance(kind, (Neumann, InflowGiven)):
                continue
            nodes = grid.face_nodes(face)
            q = kind.evaluate(grid.coords[:, nodes], t, n) if isinstance(kind, Neumann) else 0.0
            gb = grad_c[:, :, nodes].copy()
            gb[:, j] = side * q
            fb = np.asarray(problem.g_flux(gb, grid.coords[:, nodes], t))[:, j]
            div[:, nodes] += side * fb
        out += div / d
    return out


def diffusion_matrix(problem, grid, bounds, t, state=None) -> DiffusionOperator:
    """Linearisation of :func:`diffusion_divergence` on non-Dirichlet nodes.

    Only the normal-normal Jacobian blocks ``dG_ij / d(grad_j phi_l)`` enter
    (compact two-point stencil per face).  With Dirichlet data on every face
    and a symmetric PSD Jacobian the matrix is symmetric negative semi-definite.
    """
    n, N = problem.n_state, grid.size
    if problem.g_flux is None:
        keep = np.flatnonzero(np.tile(~_dirichlet_mask(grid, bounds), n))
        return DiffusionOperator(sp.csr_matrix((keep.size, keep.size)), keep)
    bounds.check_diffusive(grid)
    if state is None:
        mid = 0.5 * (np.asarray(problem.probe_low) + np.asarray(problem.probe_high))
        state = np.repeat(mid[:, None], N, axis=1)
    state = np.asarray(state, dtype=float)
    grad_c = central_gradient(grid, state)
    idx = np.arange(N)
    rows, cols, data = [], [], []
    for j in range(grid.dims):
        d2 = grid.spacing[j] ** 2
        gface, xface, _ = _face_data(grid, state, j, grad_c)
        jac = problem.diffusion_jacobian(gface, xface, t)[:, j, j, :]  # (n, n, F)
        lo = np.moveaxis(grid.reshape(idx), j, -1)[..., :-1].ravel()
        hi = lo + grid.stride(j)
        for a in range(n):
            for l in range(n):
                c = jac[a, l] / d2
                ra, rb = a * N + lo, a * N + hi
                ca, cb = l * N + lo, l * N + hi
                rows += [ra, ra, rb, rb]
                cols += [cb, ca, cb, ca]
                data += [c, -c, -c, c]
    full = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n * N, n * N)
    )
    full.eliminate_zeros()
    keep = np.flatnonzero(np.tile(~_dirichlet_mask(grid, bounds), n))
    return DiffusionOperator(full[keep][:, keep].tocsr(), keep)
