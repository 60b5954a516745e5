"""Built-in parameterized problems with their expected certificates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .certificates import MetricTransform, apply_metric, first_order_rate
from .errors import BadParams, UnknownScenario
from .grid import Grid
from .io import read_columns
from .model import BoundarySpec, Dirichlet, InflowGiven, Neumann, PdeProblem
from .optimal import (
    ControlProblem,
    ObserverProblem,
    linear_control_problem,
    sample_and_hold,
)

__all__ = [
    "Param",
    "Expectation",
    "Scenario",
    "SCENARIOS",
    "load_scenario",
    "describe",
    "saturated_g",
    "saturated_diffusion_jacobian",
    "arrhenius_integral",
    "metric_error_norm",
]


@dataclass(frozen=True)
class Param:
    name: str
    default: object
    doc: str
    check: Optional[Callable] = None
    rule: str = ""

    def coerce(self, value):
        d = self.default
        try:
            if isinstance(d, bool):
                if isinstance(value, str):
                    value = value.lower() in ("1", "true", "yes", "on")
                return bool(value)
            if isinstance(d, int):
                return int(value)
            if isinstance(d, float):
                return float(value)
            if isinstance(d, (list, tuple)):
                if isinstance(value, str):
                    value = [float(v) for v in value.split(",")]
                return tuple(float(v) for v in value)
        except (TypeError, ValueError) as exc:
            raise BadParams(f"parameter {self.name!r}: cannot convert {value!r}") from exc
        return value if value is None else str(value)


@dataclass(frozen=True)
class Expectation:
    """Classification the scenario is built to produce and, when contracting, its rate."""

    classification: Optional[str]
    rate: Optional[float] = None
    note: str = ""


@dataclass(frozen=True)
class Scenario:
    name: str
    params: dict
    expected: Expectation
    description: str
    problem: Optional[PdeProblem] = None
    grid: Optional[Grid] = None
    bounds: Optional[BoundarySpec] = None
    inits: tuple = ()
    samples: tuple = ()
    t_samples: tuple = (0.0,)
    t1: float = 1.0
    dt: Optional[float] = None
    metric: Optional[MetricTransform] = None
    basis: Optional[dict] = None
    extras: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        if self.problem is not None:
            return "pde"
        return self.extras.get("kind", "other")

    def certified_problem(self):
        return self.problem if self.metric is None else apply_metric(self.problem, self.metric)

    def certified_samples(self):
        if self.metric is None:
            return list(self.samples)
        return [self.metric.forward(s) for s in self.samples]


def _resolve(name, schema, params):
    params = dict(params or {})
    unknown = set(params) - {p.name for p in schema}
    if unknown:
        raise BadParams(f"{name}: unknown parameter(s) {sorted(unknown)}")
    out = {}
    for p in schema:
        value = p.coerce(params[p.name]) if p.name in params else p.default
        if p.check is not None and value is not None and not p.check(value):
            raise BadParams(f"{name}: parameter {p.name}={value!r} violates {p.rule}")
        out[p.name] = value
    return out


def _zeros(n):
    return lambda phi, grad, x, t: np.zeros((n, n, phi.shape[-1]))


def _poly_inits(rng, x, count, weight):
    """Smooth random cubic-ish profiles multiplied by ``weight`` (vanishing where data is given)."""
    out = []
    for _ in range(count):
        c = rng.standard_normal(3)
        out.append((weight * (c[0] + c[1] * x + c[2] * x**2))[None, :])
    return tuple(out)


def _scalar_diffusion(n, m, g):
    def g_flux(grad, x, t):
        return g * grad

    def dG(grad, x, t):
        out = np.zeros((n, m, m, n, grad.shape[-1]))
        for i in range(n):
            for j in range(m):
                out[i, j, j, i] = g
        return out

    return g_flux, dG


# ---------------------------------------------------------------------------
# transport


_TRANSPORT_SCHEMA = (
    Param("speed", 1.0, "velocity scale s", lambda v: v > 0, "s > 0"),
    Param("profile", "linear", "velocity profile: linear or constant",
          lambda v: v in ("linear", "constant"), "linear|constant"),
    Param("nodes", 201, "grid nodes on [0, 1]", lambda v: v >= 11, "nodes >= 11"),
    Param("t1", 2.0, "simulation horizon", lambda v: v > 0, "t1 > 0"),
    Param("seed", 0, "seed for the random initial profiles"),
)


def _transport_compress(p):
    s = p["speed"]
    grid = Grid((1.0,), (p["nodes"],))
    x = grid.coords[0]
    if p["profile"] == "linear":
        vel = lambda x: -s * x[0]
        expected = Expectation("contracting", s / 2, "rate |div v / 2|")
    else:
        vel = lambda x: -s * np.ones_like(x[0])
        expected = Expectation("indifferent", 0.0, "divergence-free flow")

    def h(phi, grad, x, t):
        return vel(x) * grad[:, 0]

    def velocity(phi, grad, x, t):
        return np.broadcast_to(vel(x), (1, 1, x.shape[1])).copy()

    problem = PdeProblem(1, 1, h, _zeros(1), velocity, name="transport_compress", linear=True)
    bounds = BoundarySpec({"right": InflowGiven(0.0)})
    rng = np.random.default_rng(p["seed"])
    inits = _poly_inits(rng, x, 2, 1.0 - x)
    return Scenario(
        "transport_compress", p, expected,
        "conservation law d(phi)/dt + v . grad(phi) = 0 with v = -s x on [0, 1]",
        problem, grid, bounds, inits, samples=inits, t1=p["t1"],
        basis={"family": "inflow_cosine", "size": 4},
    )


_CONSERVE_SCHEMA = (
    Param("speed", 1.0, "velocity v = s (1 + x)", lambda v: v > 0, "s > 0"),
    Param("nodes", 201, "grid nodes on [0, 1]", lambda v: v >= 11, "nodes >= 11"),
    # the flow carries any perturbation out of the domain by t = ln(2) / s
    Param("t1", 0.5, "simulation horizon", lambda v: v > 0, "t1 > 0"),
    Param("seed", 0, "seed for the random initial profiles"),
)


def _transport_conserve(p):
    s = p["speed"]
    grid = Grid((1.0,), (p["nodes"],))
    x = grid.coords[0]

    # div(phi v) with v = s (1 + x): v phi' + s phi
    def h(phi, grad, x, t):
        return s * (1 + x[0]) * grad[:, 0] + s * phi

    def dh(phi, grad, x, t):
        return np.full((1, 1, phi.shape[-1]), s)

    def velocity(phi, grad, x, t):
        return (s * (1 + x[0]))[None, None, :].copy()

    problem = PdeProblem(1, 1, h, dh, velocity, name="transport_conserve", linear=True)
    bounds = BoundarySpec({"left": InflowGiven(0.0)})
    rng = np.random.default_rng(p["seed"])
    inits = _poly_inits(rng, x, 2, x)
    return Scenario(
        "transport_conserve", p, Expectation("contracting", s / 2, "rate |div v / 2|"),
        "conservation law d(phi)/dt + div(phi v) = 0, expanding v = s (1 + x)",
        problem, grid, bounds, inits, samples=inits, t1=p["t1"],
    )


# ---------------------------------------------------------------------------
# heat


_HEAT_SCHEMA = (
    Param("g", 1.0, "diffusion constant", lambda v: v > 0, "g > 0"),
    Param("nodes", 201, "grid nodes on [0, pi]", lambda v: v >= 11, "nodes >= 11"),
    Param("t1", 1.0, "simulation horizon", lambda v: v > 0, "t1 > 0"),
    Param("modes", 2, "Galerkin basis size", lambda v: v >= 1, "modes >= 1"),
    Param("seed", 0, "seed for the higher-mode content of the first initial state"),
)


def _heat(p):
    g = p["g"]
    grid = Grid((np.pi,), (p["nodes"],))
    x = grid.coords[0]
    g_flux, dG = _scalar_diffusion(1, 1, g)
    problem = PdeProblem(
        1, 1, lambda phi, grad, x, t: np.zeros_like(phi), _zeros(1),
        lambda phi, grad, x, t: np.zeros((1, 1, phi.shape[-1])),
        g_flux=g_flux, dG_dGradPhi=dG, lambda_bound=g, name="heat", linear=True,
    )
    bounds = BoundarySpec({"left": Dirichlet(0.0), "right": Dirichlet(0.0)})
    rng = np.random.default_rng(p["seed"])
    c = 0.05 * rng.standard_normal(2)
    init_a = (np.sin(x) + c[0] * np.sin(2 * x) + c[1] * np.sin(3 * x))[None, :]
    inits = (init_a, np.zeros((1, x.size)))
    return Scenario(
        "heat", p, Expectation("contracting", g, "Fourier bound g pi^2 / l^2 with l = pi"),
        "heat equation d(phi)/dt = g lap(phi) on [0, pi] with zero Dirichlet data",
        problem, grid, bounds, inits, samples=inits, t1=p["t1"],
        basis={"family": "sine", "size": p["modes"]},
    )


# ---------------------------------------------------------------------------
# Bernoulli potential flow (certificate only)


_BERNOULLI_SCHEMA = (
    Param("nodes", 41, "nodes per axis on [-1, 1]^2", lambda v: v >= 5, "nodes >= 5"),
    Param("samples", 4, "number of sampled harmonic potentials", lambda v: v >= 1, "samples >= 1"),
    Param("potential", 0.0, "uniform potential energy U"),
    Param("seed", 0, "seed for the sampled potentials"),
)


def _bernoulli(p):
    grid = Grid((2.0, 2.0), (p["nodes"], p["nodes"]), origin=(-1.0, -1.0))
    U = p["potential"]

    def h(phi, grad, x, t):
        return 0.5 * np.sum(grad**2, axis=1) + U

    def velocity(phi, grad, x, t):
        return grad.copy()

    problem = PdeProblem(1, 2, h, _zeros(1), velocity, name="bernoulli_indifferent")
    bounds = BoundarySpec({f: InflowGiven(0.0) for f in ("left", "right", "bottom", "top")})
    rng = np.random.default_rng(p["seed"])
    x, y = grid.coords
    samples = []
    for _ in range(p["samples"]):
        a, b, c = rng.standard_normal(3)
        samples.append((a * (x**2 - y**2) + b * x + c * y)[None, :])
    return Scenario(
        "bernoulli_indifferent", p, Expectation("indifferent", 0.0, "harmonic velocity potentials"),
        "Bernoulli dynamics with Euclidean kinetic energy; certificate on harmonic potentials",
        problem, grid, bounds, samples=tuple(samples), extras={"kind": "certificate"},
    )


# ---------------------------------------------------------------------------
# wafer disk


def saturated_g(r, alpha):
    """``g*(r) = tanh(alpha r) / (alpha r)`` with the removable singularity filled in."""
    z = alpha * np.asarray(r, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z**2 / 3, np.tanh(zs) / zs)


def _saturated_dg(r, alpha):
    """``d g*/dr``."""
    z = alpha * np.asarray(r, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    full = (zs / np.cosh(zs) ** 2 - np.tanh(zs)) / zs**2
    return alpha * np.where(small, -2 * z / 3, full)


def saturated_diffusion_jacobian(grad, alpha):
    """``dG/d(grad phi) = g* I + r g*' n n^T`` for a scalar field; grad is (m, N), result (m, m, N)."""
    grad = np.asarray(grad, dtype=float)
    m = grad.shape[0]
    r = np.sqrt(np.sum(grad**2, axis=0))
    g = saturated_g(r, alpha)
    safe = np.where(r > 0, r, 1.0)
    n = grad / safe
    # r g*' n n^T == g*' grad grad^T / r, which is 0 at r = 0
    coef = np.where(r > 0, _saturated_dg(r, alpha) / safe, 0.0)
    out = g * np.eye(m)[:, :, None] + coef * r**2 * n[:, None] * n[None, :]
    return out


_WAFER_SCHEMA = (
    Param("h", 1.0, "radiation constant", lambda v: v > 0, "h > 0"),
    Param("phi_min", 0.5, "lower bound of boundary, initial and external temperatures",
          lambda v: v > 0, "phi_min > 0"),
    Param("phi_o", 0.8, "external temperature", lambda v: v > 0, "phi_o > 0"),
    Param("phi_boundary", 0.6, "temperature held at the disk rim", lambda v: v > 0, "phi_boundary > 0"),
    Param("alpha", 1.0, "saturation constant", lambda v: v > 0, "alpha > 0"),
    Param("nodes", 41, "nodes across the diameter", lambda v: v >= 11, "nodes >= 11"),
    Param("t1", 2.0, "simulation horizon", lambda v: v > 0, "t1 > 0"),
    Param("seed", 0, "seed for the initial profiles"),
)


def _wafer(p):
    hc, pmin, po, alpha = p["h"], p["phi_min"], p["phi_o"], p["alpha"]
    if p["phi_boundary"] < pmin or po < pmin:
        raise BadParams("wafer_disk: phi_boundary and phi_o must be at least phi_min")
    grid = Grid((2.0,), (p["nodes"],), origin=(-1.0,))
    x = grid.coords[0]

    def h(phi, grad, x, t):
        return hc * (phi**4 - po**4)

    def dh(phi, grad, x, t):
        return (4 * hc * phi**3)[None]

    def velocity(phi, grad, x, t):
        return np.zeros((1, 1, phi.shape[-1]))

    def g_flux(grad, x, t):
        r = np.sqrt(np.sum(grad**2, axis=1, keepdims=True))
        return saturated_g(r, alpha) * grad

    def dG(grad, x, t):
        return saturated_diffusion_jacobian(grad[0], alpha)[None, :, :, None]

    problem = PdeProblem(
        1, 1, h, dh, velocity, g_flux=g_flux, dG_dGradPhi=dG,
        # d(g* r)/dr = sech^2(alpha r) has no positive uniform lower bound
        lambda_bound=0.0, name="wafer_disk", probe_low=(pmin,), probe_high=(1.5,),
    )
    pb = p["phi_boundary"]
    bounds = BoundarySpec({"left": Dirichlet(pb), "right": Dirichlet(pb)})
    rng = np.random.default_rng(p["seed"])
    inits = []
    for _ in range(2):
        amp = 0.3 + 0.4 * rng.random()
        k = rng.integers(1, 4)
        bump = amp * np.cos(np.pi * x / 2) ** 2 * (1 + 0.3 * np.sin(k * np.pi * x))
        inits.append((pb + np.abs(bump))[None, :])
    # the trajectories stay above phi_min, so the reaction bound is checked there
    samples = tuple(inits) + (np.full((1, x.size), pmin),)
    rate = 4 * hc * pmin**3
    return Scenario(
        "wafer_disk", p, Expectation("contracting", rate, "reaction bound 4 h phi_min^3"),
        "radiating wafer with saturated diffusion g* = tanh(alpha r)/(alpha r), rim temperature held",
        problem, grid, bounds, tuple(inits), samples=samples, t1=p["t1"],
    )


# ---------------------------------------------------------------------------
# chemical reactor observer


_GAUSS = np.polynomial.legendre.leggauss(8)


def arrhenius_integral(T, T_hat, E):
    """``int_T^T_hat exp(-E/s) ds`` by 8-point Gauss-Legendre (no cancellation near T_hat = T)."""
    T = np.asarray(T, dtype=float)
    T_hat = np.asarray(T_hat, dtype=float)
    nodes, weights = _GAUSS
    mid, half = 0.5 * (T_hat + T), 0.5 * (T_hat - T)
    s = mid[..., None] + half[..., None] * nodes
    return half * np.sum(weights * np.exp(-E / s), axis=-1)


_REACTOR_SCHEMA = (
    Param("nodes", 50, "nodes per axis", lambda v: v >= 10, "nodes >= 10"),
    Param("length", 100.0, "side of the square reaction volume", lambda v: v > 0, "length > 0"),
    Param("E", 1000.0, "activation energy", lambda v: v > 0, "E > 0"),
    Param("g", 1.0, "diffusion constant", lambda v: v >= 0, "g >= 0"),
    Param("speed", 1.0, "uniform left-to-right velocity",
          lambda v: v > 0, "speed > 0"),
    Param("k1", 0.0, "concentration innovation gain"),
    Param("k2", -1.0, "temperature innovation gain"),
    Param("c_af", 0.8, "mean injected concentration", lambda v: 0 <= v <= 1, "0 <= c_af <= 1"),
    Param("c_af_amp", 0.2, "injected concentration oscillation amplitude",
          lambda v: v >= 0, "c_af_amp >= 0"),
    Param("t_f", 500.0, "injected temperature", lambda v: v > 0, "t_f > 0"),
    Param("t_in", 500.0, "inlet temperature outside the injection band", lambda v: v > 0, "t_in > 0"),
    Param("band", (40.0, 60.0), "injection band on the inlet (y range)"),
    Param("t1", 150.0, "simulation horizon", lambda v: v > 0, "t1 > 0"),
    Param("theta", None, "comma-separated diagonal metric (theta1,theta2); grid search when unset"),
    Param("c_hat0", 0.5, "initial concentration estimate", lambda v: 0 <= v <= 1, "0 <= c_hat0 <= 1"),
    Param("t_hat_offset", -30.0, "initial temperature estimate minus inlet temperature"),
)


def _reactor_terms(E, k1, k2, speed):
    """Reaction, innovation and Jacobian pieces shared by the plant and observer."""

    def rate(T):
        return np.exp(-E / T)

    def plant(c, T):
        e = rate(T)
        return e * c, 100 * e * c

    def observer(ch, Th, T):
        e = rate(Th)
        inn = arrhenius_integral(T, Th, E)
        return e * ch - k1 * inn, 100 * e * ch - k2 * inn

    def observer_jac(ch, Th):
        e = rate(Th)
        a = e * E / Th**2 * ch
        return np.array([[e, a - k1 * e], [100 * e, 100 * a - k2 * e]])

    return rate, plant, observer, observer_jac


def _reactor(p):
    n_ax, L, E, g = p["nodes"], p["length"], p["E"], p["g"]
    k1, k2, speed = p["k1"], p["k2"], p["speed"]
    lo, hi = p["band"]
    grid = Grid((L, L), (n_ax, n_ax))
    x, y = grid.coords
    rate, plant, observer, observer_jac = _reactor_terms(E, k1, k2, speed)

    def vel(N):
        v = np.zeros((2, N))
        v[0] = speed
        return v

    def inlet(xb, t):
        band = (xb[1] >= lo) & (xb[1] <= hi)
        c = np.where(band, p["c_af"] * (1 + p["c_af_amp"] * np.sin(0.05 * t)), 0.0)
        T = np.where(band, p["t_f"], p["t_in"])
        return np.array([c, T, c, T])

    # coupled plant (c, T) and observer (c_hat, T_hat); the observer reads the plant T
    def h4(phi, grad, x_, t):
        adv = speed * grad[:, 0]
        pc, pT = plant(phi[0], phi[1])
        oc, oT = observer(phi[2], phi[3], phi[1])
        return adv + np.array([pc, pT, oc, oT])

    def dh4(phi, grad, x_, t):
        N = phi.shape[-1]
        out = np.zeros((4, 4, N))
        e = rate(phi[1])
        a = e * E / phi[1] ** 2 * phi[0]
        out[0, 0], out[0, 1] = e, a
        out[1, 0], out[1, 1] = 100 * e, 100 * a
        out[2:, 2:] = observer_jac(phi[2], phi[3])
        # d(innovation)/dT = -exp(-E/T)
        out[2, 1] = k1 * e
        out[3, 1] = k2 * e
        return out

    def vel4(phi, grad, x_, t):
        return np.broadcast_to(vel(phi.shape[-1]), (4, 2, phi.shape[-1])).copy()

    gf4, dG4 = _scalar_diffusion(4, 2, g)
    coupled = PdeProblem(
        4, 2, h4, dh4, vel4, g_flux=gf4, dG_dGradPhi=dG4, lambda_bound=g, name="reactor_coupled",
        probe_low=(0.0, 400.0, 0.0, 400.0), probe_high=(1.0, 520.0, 1.0, 520.0),
    )

    # observer alone against a fixed measured temperature; the Jacobian does not depend on it
    def h2(phi, grad, x_, t):
        oc, oT = observer(phi[0], phi[1], p["t_in"])
        return speed * grad[:, 0] + np.array([oc, oT])

    def dh2(phi, grad, x_, t):
        return observer_jac(phi[0], phi[1])

    def vel2(phi, grad, x_, t):
        return np.broadcast_to(vel(phi.shape[-1]), (2, 2, phi.shape[-1])).copy()

    gf2, dG2 = _scalar_diffusion(2, 2, g)
    obs = PdeProblem(
        2, 2, h2, dh2, vel2, g_flux=gf2, dG_dGradPhi=dG2, lambda_bound=g, name="reactor_observer",
        probe_low=(0.0, 400.0), probe_high=(1.0, 520.0),
    )
    faces = {"left": Dirichlet(inlet), "right": Neumann(0.0), "bottom": Neumann(0.0), "top": Neumann(0.0)}
    bounds4 = BoundarySpec(faces)
    bounds2 = BoundarySpec({**faces, "left": Dirichlet(lambda xb, t: inlet(xb, t)[2:])})

    samples = tuple(
        np.array([np.full(grid.size, c), np.full(grid.size, T)])
        for c in (0.0, 0.5, 1.0) for T in (400.0, 450.0, 500.0, 520.0)
    )
    theta = p["theta"]
    if isinstance(theta, str):
        try:
            theta = tuple(float(v) for v in theta.split(","))
        except ValueError as exc:
            raise BadParams(f"reactor_observer: theta={theta!r} is not a comma-separated list") from exc
    if theta is not None and len(theta) != 2:
        raise BadParams("reactor_observer: theta needs two entries")
    if theta is None:
        theta = _search_theta(obs, grid, samples)
    metric = MetricTransform(np.diag(theta))

    plant0 = np.array([np.zeros(grid.size), np.full(grid.size, p["t_in"])])
    obs0 = np.array([np.full(grid.size, p["c_hat0"]), np.full(grid.size, p["t_in"] + p["t_hat_offset"])])
    init = np.vstack([plant0, obs0])
    cert = first_order_rate(apply_metric(obs, metric), grid, [metric.forward(s) for s in samples], [0.0])
    return Scenario(
        "reactor_observer", p,
        Expectation(cert.classification, cert.rate, "observer in the constant metric theta"),
        "reaction A -> B in an open 100 x 100 volume with an Arrhenius-innovation observer",
        obs, grid, bounds2, inits=(obs0,), samples=samples, t1=p["t1"], metric=metric,
        extras={"kind": "pde", "coupled": coupled, "coupled_bounds": bounds4, "coupled_init": init,
                "theta": tuple(float(v) for v in theta)},
    )


def _search_theta(problem, grid, samples):
    """Diagonal ``(1, s)`` metric with the most negative sampled certificate."""
    best = None
    for s in np.logspace(-4, 0, 41):
        m = MetricTransform(np.diag([1.0, s]))
        cert = first_order_rate(apply_metric(problem, m), grid, [m.forward(v) for v in samples], [0.0])
        if best is None or cert.lambda_V < best[0]:
            best = (cert.lambda_V, s)
    return (1.0, float(best[1]))


def metric_error_norm(grid, estimate, truth, theta):
    """``sqrt(int (theta e)^T (theta e) dV)`` for each snapshot; arrays are (T, n, N)."""
    err = np.einsum("ij,tjn->tin", np.diag(theta), np.asarray(estimate) - np.asarray(truth))
    return np.sqrt(np.einsum("tin,n->t", err**2, grid.trapezoid_weights))


# ---------------------------------------------------------------------------
# Navier-Stokes certificate (supplied velocity snapshots)


_NS_SCHEMA = (
    Param("field", "rotation", "velocity snapshot: rotation, strain or file",
          lambda v: v in ("rotation", "strain", "file"), "rotation|strain|file"),
    Param("strength", 1.0, "rotation rate or strain rate", lambda v: v >= 0, "strength >= 0"),
    Param("g", 0.1, "kinematic viscosity", lambda v: v >= 0, "g >= 0"),
    Param("nodes", 33, "nodes per axis on [-1, 1]^2", lambda v: v >= 5, "nodes >= 5"),
    Param("path", None, "CSV with v0, v1 columns in node order (field=file)"),
)


def _navier_stokes(p):
    grid = Grid((2.0, 2.0), (p["nodes"], p["nodes"]), origin=(-1.0, -1.0))
    x, y = grid.coords
    w, g = p["strength"], p["g"]

    # (v . grad) v_i; the pressure term drops out for divergence-free displacements
    def h(phi, grad, x_, t):
        return np.einsum("jn,ijn->in", phi, grad)

    def dh(phi, grad, x_, t):
        return grad.copy()

    def velocity(phi, grad, x_, t):
        return np.broadcast_to(phi[None], (2, 2, phi.shape[-1])).copy()

    problem = PdeProblem(2, 2, h, dh, velocity, name="navier_stokes_certificate")
    if g > 0:
        gf, dG = _scalar_diffusion(2, 2, g)
        problem = PdeProblem(2, 2, h, dh, velocity, g_flux=gf, dG_dGradPhi=dG, lambda_bound=g,
                             name="navier_stokes_certificate")
    bounds = BoundarySpec({f: Dirichlet(0.0) for f in ("left", "right", "bottom", "top")})
    if p["field"] == "rotation":
        snap = w * np.array([-y, x])
    elif p["field"] == "strain":
        snap = w * np.array([x, -y])
    else:
        if not p["path"]:
            raise BadParams("navier_stokes_certificate: field=file needs path")
        cols = read_columns(p["path"])
        snap = np.array([cols["v0"], cols["v1"]])
        if snap.shape != (2, grid.size):
            raise BadParams(f"snapshot has {snap.shape[1]} nodes, grid has {grid.size}")
    bound = g * 2 * np.pi**2 / 4
    if p["field"] == "rotation" and g > 0:
        expected = Expectation("contracting", bound, "skew velocity gradient plus viscous Fourier bound")
    elif p["field"] == "strain" and g == 0:
        expected = Expectation("inconclusive", None, "straining flow without viscosity")
    else:
        expected = Expectation(None, None, "no a priori expectation")
    return Scenario(
        "navier_stokes_certificate", p, expected,
        "incompressible Navier-Stokes certificate on a supplied velocity snapshot",
        problem, grid, bounds, samples=(snap,), extras={"kind": "certificate"},
    )


# ---------------------------------------------------------------------------
# optimal control and estimation


_LQC_SCHEMA = (
    Param("system", "scalar", "scalar (a, b) or double_integrator",
          lambda v: v in ("scalar", "double_integrator"), "scalar|double_integrator"),
    Param("a", 0.0, "scalar drift"),
    Param("b", 1.0, "scalar input gain", lambda v: v != 0, "b != 0"),
    Param("q", 1.0, "state weight", lambda v: v >= 0, "q >= 0"),
    Param("r", 1.0, "control weight", lambda v: v > 0, "r > 0"),
    Param("p_f", 0.5, "terminal weight", lambda v: v >= 0, "p_f >= 0"),
    Param("horizon", 20.0, "final time", lambda v: v > 0, "horizon > 0"),
    Param("x0", 1.0, "initial state (all components)"),
    Param("dt", 0.01, "integration step", lambda v: v > 0, "dt > 0"),
)


def _lq_control(p):
    if p["system"] == "scalar":
        A, B = [[p["a"]]], [[p["b"]]]
        R = [[p["q"]]]
        Pf = [[p["p_f"]]]
        x0 = np.array([p["x0"]])
        k_inf = None
    else:
        A, B = [[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]]
        R = p["q"] * np.eye(2)
        Pf = p["p_f"] * np.eye(2)
        x0 = np.full(2, p["x0"])
        k_inf = None
    cp = linear_control_problem(A, B, R, [[p["r"]]], p["horizon"], Pf, name="lq_control")
    note = "gain converges to the algebraic Riccati gain"
    return Scenario(
        "lq_control", p, Expectation("contracting", None, note),
        "linear-quadratic regulator through backward Hamiltonian characteristics",
        t1=p["horizon"], dt=p["dt"],
        extras={"kind": "control", "control": cp, "x0": x0, "A": np.array(A, float),
                "B": np.array(B, float), "R": np.atleast_2d(np.array(R, float)),
                "Q": np.array([[p["r"]]]), "k_inf": k_inf},
    )


_PENDULUM_SCHEMA = (
    Param("q", 1.0, "state weight", lambda v: v >= 0, "q >= 0"),
    Param("r", 1.0, "control weight", lambda v: v > 0, "r > 0"),
    Param("p_f", 1.0, "terminal weight", lambda v: v >= 0, "p_f >= 0"),
    Param("horizon", 3.0, "final time", lambda v: v > 0, "horizon > 0"),
    Param("x0", (0.5, 0.0), "initial angle and rate"),
    Param("dt", 0.01, "integration step", lambda v: v > 0, "dt > 0"),
)


def _pendulum(p):
    def f(x, u, t):
        return np.array([x[1], -np.sin(x[0]) + u[0]])

    def fx(x, u, t):
        return np.array([[0.0, 1.0], [-np.cos(x[0]), 0.0]])

    def fu(x, u, t):
        return np.array([[0.0], [1.0]])

    cp = ControlProblem(f, fx, fu, p["q"] * np.eye(2), [[p["r"]]], p["horizon"],
                        p["p_f"] * np.eye(2), name="pendulum_control")
    return Scenario(
        "pendulum_control", p, Expectation(None, None, "optimality spot-check only"),
        "pendulum swing-down with quadratic cost",
        t1=p["horizon"], dt=p["dt"],
        extras={"kind": "control", "control": cp, "x0": np.array(p["x0"], float)},
    )


_LQE_SCHEMA = (
    Param("system", "scalar", "scalar or two_state", lambda v: v in ("scalar", "two_state"),
          "scalar|two_state"),
    Param("a", -1.0, "scalar drift"),
    Param("c", 1.0, "scalar output gain"),
    Param("r_meas", 1.0, "measurement weight", lambda v: v > 0, "r_meas > 0"),
    Param("q_dist", 1.0, "disturbance weight", lambda v: v > 0, "q_dist > 0"),
    Param("pi0", 1.0, "initial information", lambda v: v > 0, "pi0 > 0"),
    Param("x_true0", 1.0, "initial state of the synthetic plant"),
    Param("x_hat0", 0.0, "initial estimate"),
    Param("t1", 10.0, "horizon", lambda v: v > 0, "t1 > 0"),
    Param("dt", 0.002, "integration step", lambda v: v > 0, "dt > 0"),
    Param("path", None, "measurement CSV (t, y columns); synthetic when unset"),
)


def _lq_estimation(p):
    if p["system"] == "scalar":
        A = np.array([[p["a"]]])
        C = np.array([[p["c"]]])
        G = np.eye(1)
        x_true0 = np.array([p["x_true0"]])
        x_hat0 = np.array([p["x_hat0"]])
        Pi0 = np.array([[p["pi0"]]])
    else:
        A = np.array([[0.0, 1.0], [-1.0, -0.5]])
        C = np.array([[1.0, 0.0]])
        G = np.array([[0.0], [1.0]])
        x_true0 = np.array([p["x_true0"], 0.0])
        x_hat0 = np.full(2, p["x_hat0"])
        Pi0 = p["pi0"] * np.eye(2)
    R = np.array([[p["r_meas"]]])
    Q = np.array([[p["q_dist"]]])
    dt, t1 = p["dt"], p["t1"]
    if p["path"]:
        cols = read_columns(p["path"])
        ys = np.column_stack([cols[k] for k in cols if k != "t"])
        times = np.asarray(cols["t"])
    else:
        # undisturbed plant sampled on the integration grid
        from scipy.linalg import expm

        times = np.arange(int(round(t1 / dt)) + 1) * dt
        ys = np.array([C @ expm(A * t) @ x_true0 for t in times])
    y_m = sample_and_hold(times, ys)
    op = ObserverProblem(
        f=lambda x, t: A @ x, df_dx=lambda x, t: A, G=G,
        y=lambda x, t: C @ x, dy_dx=lambda x, t: C, y_m=y_m,
        R=R, Q=Q, Pi0=Pi0, x0_hat=x_hat0, d2y_dx2=lambda x, t: np.zeros((C.shape[0],) + A.shape),
        name="lq_estimation",
    )
    return Scenario(
        "lq_estimation", p, Expectation("contracting", None, "estimate converges to the plant"),
        "linear plant observed through the information-matrix observer",
        t1=t1, dt=dt,
        extras={"kind": "observer", "observer": op, "A": A, "C": C, "G": G, "R": R, "Q": Q,
                "times": times, "y": ys, "x_true0": x_true0},
    )


SCENARIOS = {
    "transport_compress": (_TRANSPORT_SCHEMA, _transport_compress),
    "transport_conserve": (_CONSERVE_SCHEMA, _transport_conserve),
    "heat": (_HEAT_SCHEMA, _heat),
    "bernoulli_indifferent": (_BERNOULLI_SCHEMA, _bernoulli),
    "wafer_disk": (_WAFER_SCHEMA, _wafer),
    "reactor_observer": (_REACTOR_SCHEMA, _reactor),
    "navier_stokes_certificate": (_NS_SCHEMA, _navier_stokes),
    "lq_control": (_LQC_SCHEMA, _lq_control),
    "pendulum_control": (_PENDULUM_SCHEMA, _pendulum),
    "lq_estimation": (_LQE_SCHEMA, _lq_estimation),
}


def load_scenario(name, params=None) -> Scenario:
    """Build scenario ``name``; raises :class:`UnknownScenario` or :class:`BadParams`."""
    if name not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    schema, build = SCENARIOS[name]
    return build(_resolve(name, schema, params))


def describe(name=None) -> str:
    """Parameter schema text for one scenario or all of them."""
    names = sorted(SCENARIOS) if name is None else [name]
    lines = []
    for nm in names:
        if nm not in SCENARIOS:
            raise UnknownScenario(f"unknown scenario {nm!r}")
        lines.append(f"{nm}:")
        for prm in SCENARIOS[nm][0]:
            rule = f" [{prm.rule}]" if prm.rule else ""
            lines.append(f"  {prm.name} (default {prm.default!r}){rule}: {prm.doc}")
    return "\n".join(lines) + "\n"
