import numpy as np
import pytest

from contraction import BoundarySpec, Grid, InflowGiven, PdeProblem

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): end-to-end acceptance check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    label = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed and not rep.skipped
        _RESULTS[label] = _RESULTS.get(label, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance")
    for label, ok in _RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}")


def velocity_problem(vel):
    """Scalar transport ``d(phi)/dt + v . grad(phi) = 0`` with a frozen velocity field (m, N)."""
    vel = np.asarray(vel, dtype=float)
    m = vel.shape[0]

    def h(phi, grad, x, t):
        return np.einsum("jN,ijN->iN", vel, grad)

    def dh(phi, grad, x, t):
        return np.zeros((1, 1, phi.shape[-1]))

    def velocity(phi, grad, x, t):
        return vel[None].copy()

    return PdeProblem(1, m, h, dh, velocity, linear=True, name="frozen transport")


def inflow_everywhere(grid):
    return BoundarySpec({f: InflowGiven(0.0) for f in grid.faces})


def random_velocity(rng, grid):
    """Smooth modes plus a jump term, with mixed signs."""
    x = grid.coords / np.asarray(grid.lengths)[:, None]
    out = []
    for _ in range(grid.dims):
        k = rng.normal(size=grid.dims) * 3
        a = rng.normal(size=4)
        smooth = a[0] + a[1] * np.sin(np.pi * (k @ x) + a[2])
        jump = a[3] * np.sign(np.sin(7 * x[0] + a[0]))
        out.append(smooth + jump)
    return np.array(out)


@pytest.fixture
def unit_grid():
    return Grid((1.0,), (101,))
