"""Command-line front end.

    contraction analyze  --scenario transport_compress
    contraction perturb  --scenario heat --out out/heat --plot
    contraction suite    --config suite.yaml --seed 3

Exit codes: 0 success, 1 error, 2 inconclusive or degenerate.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import dynamics as dyn
from .certificates import combined_certificate
from .errors import ContractionError, DegenerateSeries
from .galerkin import galerkin_run, make_basis, mass_matrix, project_dynamics, project_field
from .io import write_csv
from .optimal import (
    ObserverRun,
    closed_loop_contraction_check,
    hjb_solve,
    kalman_bucy,
    lq_oracle,
    run_observer,
)
from .scenarios import SCENARIOS, describe, load_scenario, metric_error_norm

__all__ = ["RunConfig", "CommandResult", "main", "COMMANDS", "DEFAULT_SUITE"]

OK, ERROR, INCONCLUSIVE = 0, 1, 2

DEFAULT_SUITE = (
    ("transport_compress", "analyze"),
    ("transport_compress", "perturb"),
    ("transport_conserve", "perturb"),
    ("heat", "perturb"),
    ("heat", "galerkin"),
    ("bernoulli_indifferent", "analyze"),
    ("navier_stokes_certificate", "analyze"),
    ("wafer_disk", "perturb"),
    ("lq_control", "hjb"),
    ("lq_estimation", "observe"),
)


@dataclass
class RunConfig:
    command: str
    scenario: Optional[str] = None
    params: dict = field(default_factory=dict)
    dt: Optional[float] = None
    t1: Optional[float] = None
    out: str = "out"
    seed: int = 0
    plot: bool = False
    identical: bool = False
    basis: dict = field(default_factory=dict)
    # suite entries as [scenario, command] pairs
    suite: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text) -> "RunConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ValueError("config file must hold a mapping")
        return cls.from_dict(data)


@dataclass
class CommandResult:
    code: int
    summary: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# helpers


def _scenario(cfg):
    if not cfg.scenario:
        raise ValueError("--scenario is required")
    params = dict(cfg.params)
    if cfg.scenario in SCENARIOS:
        names = {p.name for p in SCENARIOS[cfg.scenario][0]}
        if "seed" in names and "seed" not in params:
            params["seed"] = cfg.seed
        if cfg.t1 is not None and "t1" in names and "t1" not in params:
            params["t1"] = cfg.t1
    return load_scenario(cfg.scenario, params)


def _out(cfg) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _t1(cfg, sc):
    return float(cfg.t1) if cfg.t1 is not None else float(sc.t1)


def _require(sc, kind, command):
    if sc.kind != kind and not (kind == "pde" and sc.kind == "certificate" and command == "analyze"):
        raise ValueError(f"{command} does not apply to scenario {sc.name!r} ({sc.kind})")


def _code_for(classification):
    return INCONCLUSIVE if classification == "inconclusive" else OK


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(cfg) -> CommandResult:
    """Certificate report (text plus CSV row)."""
    sc = _scenario(cfg)
    out = _out(cfg)
    if sc.kind == "control":
        return _analyze_control(cfg, sc, out)
    _require(sc, "pde", "analyze")
    cert = combined_certificate(sc.certified_problem(), sc.grid, sc.bounds,
                                sc.certified_samples(), sc.t_samples)
    extra = {"scenario": sc.name}
    if sc.metric is not None:
        extra["theta"] = " ".join(f"{v:.9g}" for v in np.ravel(sc.metric.theta))
    if sc.expected.classification is not None:
        extra["expected"] = sc.expected.classification
    text = cert.report(**extra)
    _write_text(out / "certificate.txt", text)
    write_csv(out / "certificate.csv", ("scenario",) + cert.csv_header, [(sc.name,) + cert.csv_row()])
    print(text, end="")
    return CommandResult(_code_for(cert.classification), {
        "classification": cert.classification, "certificate_rate": cert.rate})


def _analyze_control(cfg, sc, out):
    e = sc.extras
    dt = cfg.dt or sc.dt
    sol = hjb_solve(e["control"], e["x0"], dt)[0]
    rep = closed_loop_contraction_check(e["control"], sol)
    write_csv(out / "closed_loop.csv", ["t", "min_eig_W", "min_eig_H"],
              np.column_stack([rep.times, rep.min_eig_W, rep.min_eig_H]))
    text = (f"scenario: {sc.name}\nclassification: {rep.classification}\n"
            f"rate: {rep.rate:.9g}\n" + "".join(f"note: {n}\n" for n in rep.notes))
    _write_text(out / "certificate.txt", text)
    print(text, end="")
    return CommandResult(_code_for(rep.classification), {
        "classification": rep.classification, "certificate_rate": rep.rate})


def _snapshot_every(problem, grid, bounds, init, dt, t1, target=100):
    dt = dt or dyn.stable_dt(problem, grid, bounds, init, 0.0)
    steps = int(np.ceil(t1 / dt - 1e-9))
    return dt, max(1, steps // target)


def _coupled_run(cfg, sc):
    e = sc.extras
    t1 = _t1(cfg, sc)
    dt, every = _snapshot_every(e["coupled"], sc.grid, e["coupled_bounds"], e["coupled_init"], cfg.dt, t1)
    traj = dyn.run(e["coupled"], sc.grid, e["coupled_bounds"], e["coupled_init"], 0.0, t1, dt, every=every)
    err = metric_error_norm(sc.grid, traj.snapshots[:, 2:], traj.snapshots[:, :2], e["theta"])
    return traj, err


def cmd_simulate(cfg) -> CommandResult:
    """Trajectory CSV from the first default initial state."""
    sc = _scenario(cfg)
    _require(sc, "pde", "simulate")
    out = _out(cfg)
    if "coupled" in sc.extras:
        traj, err = _coupled_run(cfg, sc)
        write_csv(out / "error.csv", ["t", "error_norm"], np.column_stack([traj.times, err]))
        labels = ["c", "T", "c_hat", "T_hat"]
    else:
        if not sc.inits:
            raise ValueError(f"scenario {sc.name!r} has no initial state to simulate")
        t1 = _t1(cfg, sc)
        dt, every = _snapshot_every(sc.problem, sc.grid, sc.bounds, sc.inits[0], cfg.dt, t1)
        traj = dyn.run(sc.problem, sc.grid, sc.bounds, sc.inits[0], 0.0, t1, dt, every=every)
        labels = None
    traj.to_csv(out / "trajectory.csv")
    if cfg.plot:
        from .plotting import plot_profile

        plot_profile(sc.grid, traj.final, out / "final_state.svg", labels, f"{sc.name}, t = {traj.times[-1]:.4g}")
    print(f"scenario: {sc.name}\nsnapshots: {len(traj.times)}\nt_final: {traj.times[-1]:.9g}")
    return CommandResult(OK, {})


def cmd_perturb(cfg) -> CommandResult:
    """Decay series between two runs, fitted rate and certificate comparison."""
    sc = _scenario(cfg)
    _require(sc, "pde", "perturb")
    out = _out(cfg)
    if "coupled" in sc.extras:
        traj, err = _coupled_run(cfg, sc)
        series = dyn.DecaySeries(traj.times, err**2)
    else:
        if len(sc.inits) < 2:
            raise ValueError(f"scenario {sc.name!r} has no pair of initial states")
        init_b = sc.inits[0] if cfg.identical else sc.inits[1]
        series = dyn.perturbation_experiment(sc.problem, sc.grid, sc.bounds, sc.inits[0], init_b,
                                             0.0, _t1(cfg, sc), cfg.dt)
    series.to_csv(out / "decay.csv")
    cert = combined_certificate(sc.certified_problem(), sc.grid, sc.bounds,
                                sc.certified_samples(), sc.t_samples)
    try:
        fit = dyn.fit_rate(series)
    except DegenerateSeries as exc:
        text = f"scenario: {sc.name}\ndegenerate: {exc}\n"
        _write_text(out / "perturb.txt", text)
        print(text, end="")
        return CommandResult(INCONCLUSIVE, {"classification": cert.classification,
                                            "certificate_rate": cert.rate, "empirical_rate": "degenerate"})
    agree = (not cert.contracting) or fit.rate >= 0.9 * cert.rate
    text = (
        f"scenario: {sc.name}\nclassification: {cert.classification}\n"
        f"certificate_rate: {cert.rate:.9g}\nempirical_rate: {fit.rate:.9g}\n"
        f"r_squared: {fit.r_squared:.9g}\nagreement: {'yes' if agree else 'no'}\n"
        "rate_convention: norm rate; squared-norm decay rate is 2*rate\n"
    )
    _write_text(out / "perturb.txt", text)
    if cfg.plot:
        from .plotting import plot_decay

        plot_decay(series, fit, out / "decay.svg", cert.rate if cert.contracting else None, sc.name)
    print(text, end="")
    return CommandResult(OK if agree else INCONCLUSIVE, {
        "classification": cert.classification, "certificate_rate": cert.rate, "empirical_rate": fit.rate})


def cmd_hjb(cfg) -> CommandResult:
    """Backward characteristic, forward replay, gain and closed-loop check."""
    sc = _scenario(cfg)
    _require(sc, "control", "hjb")
    out = _out(cfg)
    e = sc.extras
    dt = cfg.dt or sc.dt
    sol = hjb_solve(e["control"], e["x0"], dt)[0]
    sol.to_csv(out / "hjb.csv")
    rep = closed_loop_contraction_check(e["control"], sol)
    write_csv(out / "closed_loop.csv", ["t", "min_eig_W", "min_eig_H"],
              np.column_stack([rep.times, rep.min_eig_W, rep.min_eig_H]))
    lines = [f"scenario: {sc.name}", f"iterations: {sol.iterations}", f"cost: {sol.cost:.9g}",
             "gain_t0: " + " ".join(f"{v:.9g}" for v in sol.gain[0].ravel()),
             f"closed_loop: {rep.classification}", f"closed_loop_rate: {rep.rate:.9g}"]
    if "A" in e and e["control"].linear:
        orc = lq_oracle(e["A"], e["B"], e["R"], e["Q"], e["control"].t_f, e["control"].P_f,
                        times=sol.times)
        lines.append(f"max_abs_H_minus_riccati: {np.max(np.abs(sol.H - orc.P)):.3g}")
    if cfg.plot:
        from .plotting import plot_series

        K = sol.gain.reshape(len(sol.times), -1).T
        plot_series(sol.times, K, [f"gain{i}" for i in range(K.shape[0])], out / "gain.svg", "gain",
                    title=sc.name)
    text = "\n".join(lines) + "\n"
    _write_text(out / "hjb.txt", text)
    print(text, end="")
    return CommandResult(_code_for(rep.classification), {
        "classification": rep.classification, "certificate_rate": rep.rate})


def cmd_observe(cfg) -> CommandResult:
    """Observer estimate, plus the Kalman-Bucy reference for linear plants."""
    sc = _scenario(cfg)
    _require(sc, "observer", "observe")
    out = _out(cfg)
    e = sc.extras
    op = e["observer"]
    dt = cfg.dt or sc.dt
    t1 = _t1(cfg, sc)
    run = run_observer(op, 0.0, t1, dt)
    run.to_csv(out / "estimate.csv")
    lines = [f"scenario: {sc.name}"]
    tk, xk, Pk = kalman_bucy(e["A"], e["C"], e["G"], e["R"], e["Q"], op.x0_hat,
                             np.linalg.inv(op.Pi0), op.y_m, 0.0, t1, dt)
    gain = np.einsum("tab,cb,cd->tad", Pk, e["C"], e["R"])
    ref = ObserverRun(tk, xk, np.linalg.inv(Pk), gain)
    ref.to_csv(out / "kalman.csv")
    lines.append(f"max_abs_estimate_vs_kalman: {np.max(np.abs(run.x_hat - xk)):.3g}")
    lines.append(f"max_abs_covariance_vs_kalman: {np.max(np.abs(run.covariance - Pk)):.3g}")
    if "x_true0" in e and not sc.params.get("path"):
        from scipy.linalg import expm

        truth = np.array([expm(e["A"] * t) @ e["x_true0"] for t in run.times])
        err = np.linalg.norm(run.x_hat - truth, axis=1)
        lines.append(f"initial_error: {err[0]:.9g}")
        lines.append(f"final_error: {err[-1]:.9g}")
    if cfg.plot:
        from .plotting import plot_series

        plot_series(run.times, run.x_hat.T, [f"xhat{i}" for i in range(run.x_hat.shape[1])],
                    out / "estimate.svg", "estimate", title=sc.name)
    text = "\n".join(lines) + "\n"
    _write_text(out / "observe.txt", text)
    print(text, end="")
    return CommandResult(OK, {})


def cmd_galerkin(cfg) -> CommandResult:
    """Two coefficient runs from projected initial states and their metric distance."""
    sc = _scenario(cfg)
    _require(sc, "pde", "galerkin")
    chosen = {**(sc.basis or {}), **cfg.basis}
    if "family" not in chosen:
        raise ValueError(f"scenario {sc.name!r} has no default basis; set basis.family in the config")
    out = _out(cfg)
    basis = make_basis(chosen["family"], sc.grid, int(chosen.get("size", 2)),
                       **{k: v for k, v in chosen.items() if k not in ("family", "size")})
    a0 = project_field(basis, sc.inits[0])
    b0 = project_field(basis, sc.inits[1]) if len(sc.inits) > 1 else np.zeros_like(a0)
    dt = cfg.dt or 0.01
    t1 = _t1(cfg, sc)
    run_a = galerkin_run(sc.problem, basis.with_coeffs(a0), 0.0, t1, dt, sc.bounds)
    run_b = galerkin_run(sc.problem, basis.with_coeffs(b0), 0.0, t1, dt, sc.bounds)
    rates = np.array([project_dynamics(sc.problem, basis, t, sc.bounds, a)
                      for t, a in zip(run_a.times, run_a.coeffs)])
    run_a.to_csv(out / "galerkin.csv", rates)
    d2 = run_a.distance(run_b)
    series = dyn.DecaySeries(run_a.times, d2)
    series.to_csv(out / "galerkin_distance.csv")
    cert = combined_certificate(sc.certified_problem(), sc.grid, sc.bounds,
                                sc.certified_samples(), sc.t_samples)
    try:
        fit = dyn.fit_rate(series)
    except DegenerateSeries as exc:
        print(f"scenario: {sc.name}\ndegenerate: {exc}")
        return CommandResult(INCONCLUSIVE, {"empirical_rate": "degenerate"})
    monotone = bool(np.all(np.diff(d2) <= 1e-12 * max(d2[0], 1e-300)))
    modal = -rates[0] / np.where(a0 != 0, a0, np.nan)
    text = (
        f"scenario: {sc.name}\nbasis: {chosen['family']} x {basis.size}\n"
        f"certificate_rate: {cert.rate:.9g}\ngalerkin_rate: {fit.rate:.9g}\n"
        f"distance_non_increasing: {'yes' if monotone else 'no'}\n"
        "initial_adot_over_a: " + " ".join(f"{v:.6g}" for v in modal) + "\n"
    )
    _write_text(out / "galerkin.txt", text)
    if cfg.plot:
        from .plotting import plot_decay

        plot_decay(series, fit, out / "galerkin_decay.svg", cert.rate if cert.contracting else None, sc.name)
    print(text, end="")
    return CommandResult(OK, {"classification": cert.classification, "certificate_rate": cert.rate,
                              "empirical_rate": fit.rate})


def cmd_suite(cfg) -> CommandResult:
    """Run a list of (scenario, command) pairs into sub-directories and write summary.csv."""
    entries = [tuple(e) for e in cfg.suite] or list(DEFAULT_SUITE)
    root = _out(cfg)
    rows, worst = [], OK
    for name, command in entries:
        if command == "suite" or command not in COMMANDS:
            raise ValueError(f"suite entry {name}/{command}: unknown command")
        sub = RunConfig(command, name, dict(cfg.params.get(name, {})), cfg.dt, None,
                        str(root / f"{name}_{command}"), cfg.seed, cfg.plot, False, dict(cfg.basis))
        print(f"== {name} {command}")
        try:
            res = COMMANDS[command][0](sub)
        except (ContractionError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            res = CommandResult(ERROR, {})
        worst = max(worst, res.code)
        s = res.summary
        rows.append((name, command, res.code, s.get("classification", ""),
                     s.get("certificate_rate", ""), s.get("empirical_rate", "")))
    write_csv(root / "summary.csv",
              ["scenario", "command", "exit_code", "classification", "certificate_rate", "empirical_rate"],
              rows)
    return CommandResult(ERROR if worst == ERROR else OK, {})


COMMANDS = {
    "analyze": (cmd_analyze, "certificate report for a scenario"),
    "simulate": (cmd_simulate, "simulate the first initial state"),
    "perturb": (cmd_perturb, "perturbation experiment and fitted decay rate"),
    "hjb": (cmd_hjb, "HJB controller along characteristics"),
    "observe": (cmd_observe, "optimal observer with Kalman-Bucy reference"),
    "galerkin": (cmd_galerkin, "Galerkin coefficient runs and their distance"),
    "suite": (cmd_suite, "run a list of scenario/command pairs"),
}

_COMMAND_SCHEMA = """config keys (YAML mapping; command-line flags win):
  command: {commands}
  scenario: scenario name
  params: mapping of scenario parameters (suite: mapping of scenario -> parameters)
  dt: time step (default: CFL-limited or scenario default)
  t1: horizon (default: scenario default)
  out: output directory (default out)
  seed: seed for randomized initial states (default 0)
  plot: write SVG figures next to the CSV files
  identical: perturb from two identical initial states
  basis: galerkin basis override, e.g. {{family: sine, size: 4}}
  suite: list of [scenario, command] pairs
"""


def _parser():
    ap = argparse.ArgumentParser(prog="contraction", description="Contraction analysis of distributed systems")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario")
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out")
        p.add_argument("--dt", type=float)
        p.add_argument("--t1", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--plot", action="store_true", default=None)
        p.add_argument("--identical", action="store_true", default=None,
                       help="perturb: start both runs from the same state")
        p.add_argument("--describe", action="store_true", help="print the parameter schema and exit")
    return ap


def build_config(args) -> RunConfig:
    data = {}
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ValueError("config file must hold a mapping")
    data["command"] = args.command
    for key in ("scenario", "out", "dt", "t1", "seed", "plot", "identical"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.param:
        params = dict(data.get("params") or {})
        for item in args.param:
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"--param expects KEY=VALUE, got {item!r}")
            params[key.strip()] = yaml.safe_load(value)
        data["params"] = params
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.describe:
        try:
            if args.scenario:
                print(describe(args.scenario), end="")
            else:
                print(f"{args.command}: {COMMANDS[args.command][1]}")
                print(_COMMAND_SCHEMA.format(commands="|".join(COMMANDS)), end="")
                print("scenarios:")
                print(describe(), end="")
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return ERROR
        return OK
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command][0](cfg).code
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
    except (ContractionError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return ERROR
