import numpy as np
import pytest
from hypothesis import settings
from scipy.optimize import root

from neumann_superprocess import BranchingMechanism, Grid1D, Measure, NeumannProblem

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def domain_function(p: NeumannProblem, c0: float):
    """Quadratic c0 + c1 x + a x² satisfying the nonlinear boundary condition of p."""
    mech, (g0, g1) = p.mech, p.g

    def eqs(z):
        c1, a = z
        return [-c1 + float(mech.beta(c0)) - g0, (c1 + 2 * a) + float(mech.beta(c0 + c1 + a)) - g1]

    sol = root(eqs, [0.0, 0.0], tol=1e-14)
    assert np.max(np.abs(eqs(sol.x))) < 1e-10
    c1, a = sol.x
    return p.grid.function(lambda x: c0 + c1 * x + a * x * x)


@pytest.fixture
def headline_mech():
    return BranchingMechanism(((1.0, 0.2),), 0.03)


@pytest.fixture
def grid401():
    return Grid1D(401)


@pytest.fixture
def headline(headline_mech, grid401):
    return NeumannProblem(0.5, headline_mech, (0.0, 0.0), grid401)


@pytest.fixture
def smooth_mu(grid401):
    return Measure.from_density(lambda x: 1 + 0.5 * np.sin(3 * x) + x**2, grid401)


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion and echo it."""

    def _report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
