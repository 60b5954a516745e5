"""Contraction analysis and simulation of nonlinear distributed systems."""
from .certificates import (
    Certificate,
    MetricTransform,
    apply_metric,
    combined_certificate,
    diffusion_rate_bound,
    first_order_rate,
)
from .dynamics import fit_rate, perturbation_experiment, run, step
from .grid import Field, Grid
from .model import BoundarySpec, Dirichlet, InflowGiven, Neumann, PdeProblem, validate_problem
from .scenarios import load_scenario

__all__ = [
    "BoundarySpec",
    "Certificate",
    "Dirichlet",
    "Field",
    "Grid",
    "InflowGiven",
    "MetricTransform",
    "Neumann",
    "PdeProblem",
    "apply_metric",
    "combined_certificate",
    "diffusion_rate_bound",
    "first_order_rate",
    "fit_rate",
    "load_scenario",
    "perturbation_experiment",
    "run",
    "step",
    "validate_problem",
]
