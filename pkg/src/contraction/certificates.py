"""Contraction certificates for first- and second-order problems.

All reported rates are *norm* rates: a certified rate ``r`` means
``sqrt(int dPhi^T dPhi dV)`` decays at least like ``exp(-r t)``; the squared
norm decays at ``2 r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptySampleSet, MissingLambdaBound, SingularTheta
from .grid import central_gradient

__all__ = [
    "Certificate",
    "MetricTransform",
    "certificate_matrix",
    "first_order_rate",
    "diffusion_rate_bound",
    "combined_certificate",
    "apply_metric",
    "classify",
]

TOL = 1e-10
RATE_CONVENTION = "norm rate; squared-norm decay rate is 2*rate"


@dataclass(frozen=True)
class Certificate:
    lambda_V: float
    diffusion_bound: float
    rate: float
    classification: str
    sampled: bool = True
    n_samples: int = 0
    # largest |eigenvalue| of the first-order certificate matrix seen
    f_absmax: float = 0.0
    notes: tuple = field(default_factory=tuple)

    @property
    def contracting(self) -> bool:
        return self.classification == "contracting"

    def report(self, **extra) -> str:
        items = dict(extra)
        items.update(
            lambda_V=_fmt(self.lambda_V),
            diffusion_bound=_fmt(self.diffusion_bound),
            rate=_fmt(self.rate),
            classification=self.classification,
            certificate="sampled" if self.sampled else "exact",
            n_samples=self.n_samples,
            rate_convention=RATE_CONVENTION,
        )
        lines = [f"{k}: {v}" for k, v in items.items()]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    csv_header = ("lambda_V", "diffusion_bound", "rate", "classification")

    def csv_row(self):
        return (self.lambda_V, self.diffusion_bound, self.rate, self.classification)


def _fmt(v):
    return f"{v:.9g}"


def classify(lambda_V, bound, f_absmax, tol=TOL):
    """(classification, rate) from the first-order eigenvalue and diffusion bound."""
    total = lambda_V - bound
    if total < -tol:
        return "contracting", abs(total)
    if f_absmax <= tol and bound <= tol:
        return "indifferent", 0.0
    if total <= tol:
        return "semi-contracting", 0.0
    return "inconclusive", 0.0


def certificate_matrix(problem, grid, values, t):
    """Symmetric part of ``-dh/dPhi + diag(div v_i / 2)`` per node, shape (N, n, n)."""
    values = np.asarray(values, dtype=float)
    x = grid.coords
    grad = central_gradient(grid, values)
    jac = np.asarray(problem.dh_dPhi(values, grad, x, t), dtype=float)
    vel = np.asarray(problem.dh_dGradPhi(values, grad, x, t), dtype=float)
    div = np.zeros((problem.n_state, grid.size))
    for j in range(grid.dims):
        div += central_gradient(grid, vel[:, j])[:, j]
    f = -np.moveaxis(jac, -1, 0)
    idx = np.arange(problem.n_state)
    f[:, idx, idx] += 0.5 * div.T
    return 0.5 * (f + np.swapaxes(f, 1, 2))


def first_order_rate(problem, grid, states, t_samples) -> Certificate:
    """Sampled first-order certificate.

    ``lambda_V`` is the largest eigenvalue of the symmetric certificate
    matrix over every node, state and time supplied.  The result is only
    as uniform as the samples are representative.
    """
    states = [np.atleast_2d(np.asarray(s, dtype=float)) for s in states]
    t_samples = list(np.atleast_1d(t_samples))
    if not states or not t_samples:
        raise EmptySampleSet("need at least one state and one time sample")
    lam = -np.inf
    absmax = 0.0
    for s in states:
        for t in t_samples:
            eig = np.linalg.eigvalsh(certificate_matrix(problem, grid, s, float(t)))
            lam = max(lam, float(eig.max()))
            absmax = max(absmax, float(np.abs(eig).max()))
    cls, rate = classify(lam, 0.0, absmax)
    return Certificate(lam, 0.0, rate, cls, n_samples=len(states) * len(t_samples), f_absmax=absmax)


def diffusion_rate_bound(problem, grid, bounds, aggregate="min") -> float:
    """Fourier lower bound on the diffusion contribution to the rate.

    Per component ``i`` the bound is ``sum_j Lambda_ijij pi^2 / l_j^2`` over
    axes with Dirichlet data on both faces (other axes contribute 0).
    ``aggregate="min"`` takes the weakest component, which is what bounds
    the decay of the full vector norm; ``"sum"`` adds the components up.
    """
    if problem.g_flux is None and problem.lambda_bound is None:
        return 0.0
    if problem.lambda_bound is None:
        raise MissingLambdaBound(f"problem {problem.name!r} has diffusion but no lambda_bound")
    lam = problem.lambda_diag()
    lengths = np.asarray(grid.lengths)
    active = np.array([bounds.axis_is_dirichlet(grid, j) for j in range(grid.dims)])
    per_comp = (lam * np.where(active, np.pi**2 / lengths**2, 0.0)).sum(axis=1)
    if aggregate == "min":
        return float(per_comp.min())
    if aggregate == "sum":
        return float(per_comp.sum())
    raise ValueError(f"unknown aggregate {aggregate!r}")


def combined_certificate(problem, grid, bounds, states, t_samples, aggregate="min") -> Certificate:
    first = first_order_rate(problem, grid, states, t_samples)
    bound = diffusion_rate_bound(problem, grid, bounds, aggregate)
    cls, rate = classify(first.lambda_V, bound, first.f_absmax)
    return replace(first, diffusion_bound=bound, rate=rate, classification=cls)


# ---------------------------------------------------------------------------
# constant metrics


@dataclass(frozen=True)
class MetricTransform:
    """Constant coordinate change ``dPsi = theta dPhi``; metric ``M = theta^T theta``."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if theta.shape[0] != theta.shape[1]:
            raise SingularTheta("theta must be square")
        if not np.all(np.isfinite(theta)) or np.linalg.cond(theta) > 1e12:
            raise SingularTheta("theta is singular")
        object.__setattr__(self, "theta", theta)

    @property
    def metric(self) -> np.ndarray:
        return self.theta.T @ self.theta

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.theta)

    def forward(self, values):
        return np.einsum("il,l...->i...", self.theta, np.asarray(values, dtype=float))

    def backward(self, values):
        return np.einsum("il,l...->i...", self.inverse, np.asarray(values, dtype=float))


def apply_metric(problem, transform: MetricTransform):
    """The problem written in the coordinates ``Psi = theta Phi``.

    The reaction Jacobian becomes ``theta (dh/dPhi) theta^-1``.  The velocity
    is passed through unchanged, which is exact when every component is
    convected with the same velocity (or theta is diagonal).
    """
    th = transform.theta
    if th.shape[0] != problem.n_state:
        raise SingularTheta(f"theta is {th.shape}, problem has {problem.n_state} states")
    inv = transform.inverse

    def back(psi):
        return np.einsum("il,l...->i...", inv, psi)

    def h(psi, gpsi, x, t):
        return np.einsum("il,l...->i...", th, problem.h(back(psi), back(gpsi), x, t))

    def dh_dPhi(psi, gpsi, x, t):
        jac = problem.dh_dPhi(back(psi), back(gpsi), x, t)
        return np.einsum("ia,ab...,bl->il...", th, jac, inv)

    def dh_dGradPhi(psi, gpsi, x, t):
        return problem.dh_dGradPhi(back(psi), back(gpsi), x, t)

    g_flux = dG = None
    if problem.g_flux is not None:
        def g_flux(gpsi, x, t):
            return np.einsum("il,l...->i...", th, problem.g_flux(back(gpsi), x, t))

        def dG(gpsi, x, t):
            jac = problem.diffusion_jacobian(back(gpsi), x, t)
            return np.einsum("ia,ajkb...,bl->ijkl...", th, jac, inv)

    projector = None
    if problem.constraint_projector is not None:
        projector = th @ np.asarray(problem.constraint_projector) @ inv

    corners = np.array(np.meshgrid(*zip(problem.probe_low, problem.probe_high), indexing="ij"))
    corners = corners.reshape(problem.n_state, -1)
    mapped = th @ corners
    return replace(
        problem,
        h=h,
        dh_dPhi=dh_dPhi,
        dh_dGradPhi=dh_dGradPhi,
        g_flux=g_flux,
        dG_dGradPhi=dG,
        constraint_projector=projector,
        name=f"{problem.name} (metric)",
        probe_low=tuple(mapped.min(axis=1)),
        probe_high=tuple(mapped.max(axis=1)),
    )
