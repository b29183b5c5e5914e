"""Cross-checks of the deterministic and Monte Carlo sides of the log-Laplace dualities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .boundary import BoundaryState, dtn, evolve_W, mc_boundary_duality
from .grid1d import GridFunction
from .measures import Measure
from .pde import NeumannProblem, evolve_cl
from .pdmp import SimConfig, SimResult, mc_log_laplace


def within_tolerance(delta: float, std_error: float, value: float,
                     rel_tol: float = 0.02, abs_floor: float = 0.005) -> tuple[bool, float]:
    """|Δ| <= max(3·SE, rel_tol·|value| + abs_floor); returns (pass, allowance)."""
    allowance = max(3.0 * std_error, rel_tol * abs(value) + abs_floor)
    return bool(abs(delta) <= allowance), allowance


@dataclass
class DualityReport:
    experiment: str
    deterministic: float
    estimate: float
    std_error: float
    delta: float
    allowance: float
    passed: bool
    n_dead: int
    sim: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name, value, sim: SimResult, rel_tol, abs_floor) -> DualityReport:
    delta = sim.estimate - value if math.isfinite(sim.estimate) else math.inf
    ok, allow = within_tolerance(delta, sim.std_error, value, rel_tol, abs_floor)
    return DualityReport(name, value, sim.estimate, sim.std_error, delta, allow, ok,
                         sim.n_dead, json_safe(sim.__dict__))


def json_safe(obj):
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return json_safe(obj.tolist())
    return obj


def pde_log_laplace(p: NeumannProblem, mu0: Measure, f: GridFunction, t: float,
                    n_steps: int) -> float:
    """∫ V_t f dμ0, the deterministic side of the interior duality."""
    return mu0.integrate(evolve_cl(p, f, t, n_steps).u)


def verify_interior(p: NeumannProblem, mu0: Measure, f: GridFunction, t: float, n_steps: int,
                    sim: SimConfig, rel_tol: float = 0.02, abs_floor: float = 0.005) -> DualityReport:
    value = pde_log_laplace(p, mu0, f, t, n_steps)
    return _report("interior", value, mc_log_laplace(p, mu0, f, t, sim), rel_tol, abs_floor)


def verify_boundary(p: NeumannProblem, m0, f_boundary, t: float, n_steps: int, sim: SimConfig,
                    rel_tol: float = 0.02, abs_floor: float = 0.0) -> DualityReport:
    op = dtn(p.alpha)
    m0 = m0 if isinstance(m0, BoundaryState) else BoundaryState(tuple(m0))
    w = evolve_W(op, p.mech, f_boundary, t, n_steps)
    value = float(np.dot(w, m0.m))
    res = mc_boundary_duality(op, p.mech, m0, f_boundary, t, sim)
    return _report("boundary", value, res, rel_tol, abs_floor)
