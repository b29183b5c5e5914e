"""Deterministic solver for the nonlinear Neumann parabolic problem

    u_t - ½Δu + αu = 0        in (0, ∞) × (0, 1),
    ∂u/∂ν + β(u) = g          on {0, 1},
    u(0) = f.

Space is discretized with the ghost-node (lumped piecewise-linear) scheme,
whose boundary rows read

    u_0' = (u_1 - u_0)/h² + (g_0 - β(u_0))/h - αu_0.

The semi-discrete operator is the gradient of the discrete energy
``energy_phi`` for the trapezoidal inner product, so the discrete problem
keeps the monotonicity and comparison structure of the continuous one.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from .grid1d import (
    Grid1D,
    GridFunction,
    RobinHeatSemigroup,
    half_stiffness_banded,
    laplace_half,
    normal_derivative,
)
from .mechanism import BranchingMechanism, check_admissible

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Numerical failure (Newton divergence, slab non-contraction, ...)."""


class InadmissibleMechanism(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NeumannProblem:
    alpha: float
    mech: BranchingMechanism
    g: tuple[float, float] = (0.0, 0.0)
    grid: Grid1D = field(default_factory=lambda: Grid1D(401))
    unsafe: bool = False

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        g = tuple(float(v) for v in self.g)
        if len(g) != 2 or min(g) < 0:
            raise ValueError(f"g must be a pair of nonnegative reals, got {self.g}")
        object.__setattr__(self, "g", g)
        if not self.unsafe:
            report = check_admissible(self.mech, self.alpha)
            if not report.admissible:
                raise InadmissibleMechanism(report.message())

    @property
    def h(self) -> float:
        return self.grid.h

    def with_grid(self, grid: Grid1D) -> "NeumannProblem":
        return NeumannProblem(self.alpha, self.mech, self.g, grid, unsafe=True)

    def with_g(self, g) -> "NeumannProblem":
        return NeumannProblem(self.alpha, self.mech, tuple(g), self.grid, unsafe=True)

    def operator_banded(self) -> np.ndarray:
        """Linear part -½Δ + α with Neumann ghost rows, LAPACK banded (1,1) layout."""
        w = self.grid.weights
        K = half_stiffness_banded(self.grid)
        out = np.zeros_like(K)
        out[1] = K[1] / w + self.alpha
        out[0, 1:] = K[0, 1:] / w[:-1]  # entry (j, j+1) belongs to row j
        out[2, :-1] = K[2, :-1] / w[1:]  # entry (j+1, j) belongs to row j+1
        return out

    def boundary_flux(self, u0, u1) -> np.ndarray:
        """Outward flux g - β(u) prescribed at the two endpoints (broadcasts)."""
        return np.stack([self.g[0] - self.mech.beta(u0), self.g[1] - self.mech.beta(u1)], axis=-1)


def _banded_matvec(ab: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = ab[1] * v
    out[:-1] += ab[0, 1:] * v[1:]
    out[1:] += ab[2, :-1] * v[:-1]
    return out


def _operator_values(p: NeumannProblem, u: np.ndarray, lin: np.ndarray) -> np.ndarray:
    """Semi-discrete nonlinear operator A_h(u)."""
    out = _banded_matvec(lin, u)
    flux = p.boundary_flux(u[0], u[-1])
    out[0] -= flux[0] / p.h
    out[-1] -= flux[1] / p.h
    return out


@dataclass(frozen=True, eq=False)
class BoundaryResidual:
    interior: GridFunction
    boundary: tuple[float, float]


def apply_A(p: NeumannProblem, u: GridFunction) -> BoundaryResidual:
    """-½Δu + αu at every node, plus the boundary defect ∂u/∂ν + β(u) - g."""
    interior = GridFunction(-laplace_half(u).values + p.alpha * u.values, u.grid)
    dn = np.array(normal_derivative(u))
    r = dn + p.mech.beta(np.array(u.trace())) - np.array(p.g)
    return BoundaryResidual(interior, (float(r[0]), float(r[1])))


def _resolvent_values(p, f, lam, lin, tol=1e-10, max_iter=50):
    """Newton solve of u + lam*A_h(u) = f. Returns (u, residual)."""
    n = p.grid.n
    base = lam * lin
    base[1] += 1.0
    u = f.copy()
    scale = max(1.0, float(np.max(np.abs(f))))

    def residual(v):
        return v + lam * _operator_values(p, v, lin) - f

    r = residual(u)
    rn = float(np.max(np.abs(r)))
    if p.mech.is_trivial:
        # linear: one direct solve, then one refinement pass
        for _ in range(2):
            u = u - solve_banded((1, 1), base, r)
            r = residual(u)
            rn = float(np.max(np.abs(r)))
        return u, rn
    for _ in range(max_iter):
        if rn <= tol * scale:
            return u, rn
        jac = base.copy()
        db = p.mech.dbeta(np.array([u[0], u[-1]]))
        jac[1, 0] += lam * db[0] / p.h
        jac[1, n - 1] += lam * db[1] / p.h
        step = solve_banded((1, 1), jac, r)
        t = 1.0
        while True:
            trial = u - t * step
            rt = residual(trial)
            rtn = float(np.max(np.abs(rt)))
            if rtn < rn or t < 1e-6:
                break
            t *= 0.5
        u, r, rn = trial, rt, rtn
    if rn <= tol * scale:
        return u, rn
    raise SolverError(f"resolvent Newton did not converge in {max_iter} iterations "
                      f"(residual {rn:.3g}, lambda={lam})")


def resolvent(p: NeumannProblem, f: GridFunction, lam: float) -> GridFunction:
    """Solve (I + lam A)u = f with the nonlinear Robin rows."""
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    u, _ = _resolvent_values(p, np.array(f.values), lam, p.operator_banded())
    return GridFunction(u, f.grid)


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    u: GridFunction
    t: float
    scheme: str
    steps: int
    residual: float
    flags: tuple[str, ...] = ()
    trace_times: np.ndarray | None = None
    trace_values: np.ndarray | None = None

    def to_files(self, csv_path, json_path=None) -> None:
        self.u.to_csv(csv_path)
        json_path = Path(json_path) if json_path else Path(csv_path).with_suffix(".json")
        json_path.write_text(json.dumps(self.sidecar(), indent=2))

    def sidecar(self) -> dict:
        return {"t": self.t, "scheme": self.scheme, "steps": self.steps,
                "residual": self.residual}


def _input_flags(f: GridFunction) -> tuple[str, ...]:
    if np.any(f.values < 0):
        warnings.warn("initial datum has negative entries; probabilistic identities "
                      "only apply to f >= 0", RuntimeWarning, stacklevel=3)
        return ("negative_input",)
    return ()


def evolve_cl(p: NeumannProblem, f: GridFunction, t: float, n_steps: int = 256) -> EvolutionResult:
    """Implicit Euler / Crandall-Liggett product: V_t f ≈ (I + (t/n)A)^{-n} f."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    flags = _input_flags(f)
    if t == 0:
        return EvolutionResult(f, 0.0, "crandall_liggett", 0, 0.0, flags)
    lam = t / n_steps
    lin = p.operator_banded()
    u = np.array(f.values)
    worst = 0.0
    for _ in range(n_steps):
        u, res = _resolvent_values(p, u, lam, lin)
        worst = max(worst, res)
    return EvolutionResult(GridFunction(u, f.grid), float(t), "crandall_liggett", n_steps, worst, flags)


def evolve_linear(p: NeumannProblem, f: GridFunction, t: float) -> EvolutionResult:
    """Exact semi-discrete flow when β ≡ 0 and g = 0 (reflected heat flow with decay)."""
    if not p.mech.is_trivial or any(p.g):
        raise ValueError("evolve_linear needs a trivial mechanism and g = 0")
    sg = RobinHeatSemigroup(p.grid, p.alpha)
    return EvolutionResult(GridFunction(sg.propagate(np.array(f.values), t), f.grid),
                           float(t), "linear", 1, 0.0, _input_flags(f))


def _cn_slab(p, lin, u_start, flux_hist, tau, m, first_be):
    """Crank-Nicolson march over one slab with a prescribed boundary flux history.

    flux_hist has shape (m+1, 2): outward flux at the m+1 slab time nodes.
    Returns the states (m+1, n).
    """
    n = p.grid.n
    lhs = 0.5 * tau * lin
    lhs[1] += 1.0
    states = np.empty((m + 1, n))
    states[0] = u_start
    u = u_start.copy()
    for k in range(m):
        if first_be and k == 0:
            # two implicit-Euler half steps damp the start-up boundary layer
            be = 0.5 * tau * lin
            be[1] += 1.0
            for q in (0.5, 1.0):
                fl = (1 - q) * flux_hist[0] + q * flux_hist[1] if q < 1 else flux_hist[1]
                rhs = u.copy()
                rhs[0] += 0.5 * tau * fl[0] / p.h
                rhs[-1] += 0.5 * tau * fl[1] / p.h
                u = solve_banded((1, 1), be, rhs)
        else:
            rhs = u - 0.5 * tau * _banded_matvec(lin, u)
            fl = 0.5 * (flux_hist[k] + flux_hist[k + 1])
            rhs[0] += tau * fl[0] / p.h
            rhs[-1] += tau * fl[1] / p.h
            u = solve_banded((1, 1), lhs, rhs)
        states[k + 1] = u
    return states


def evolve_iteration(p: NeumannProblem, f: GridFunction, t: float, dt: float = 1 / 64,
                     tol: float = 1e-10, substeps: int = 8, max_iter: int = 200) -> EvolutionResult:
    """Lagged-boundary fixed-point iteration on consecutive time slabs.

    On each slab of length dt the linear problem with boundary flux
    g - β(u_n) is solved (Crank-Nicolson, ``substeps`` steps) and iterated
    until successive boundary traces differ by less than tol in L²(slab × Γ).
    """
    if t < 0 or dt <= 0 or tol <= 0:
        raise ValueError("need t >= 0, dt > 0, tol > 0")
    flags = _input_flags(f)
    if t == 0:
        return EvolutionResult(f, 0.0, "iteration", 0, 0.0, flags)
    lin = p.operator_banded()
    u = np.array(f.values)
    n_slabs = int(np.ceil(t / dt - 1e-12))
    times = [0.0]
    traces = [[u[0], u[-1]]]
    worst_iter, last_diff = 0, 0.0
    t0 = 0.0
    for s in range(n_slabs):
        length = min(dt, t - t0)
        m = max(1, int(round(substeps * length / dt)))
        tau = length / m
        w = np.full(m + 1, tau)
        w[0] = w[-1] = 0.5 * tau
        trace = np.tile([u[0], u[-1]], (m + 1, 1))
        flux = p.boundary_flux(trace[:, 0], trace[:, 1])
        diff = np.inf
        for it in range(1, max_iter + 1):
            states = _cn_slab(p, lin, u, flux, tau, m, first_be=(s == 0))
            new_trace = states[:, [0, -1]]
            new_flux = p.boundary_flux(new_trace[:, 0], new_trace[:, 1])
            diff = float(np.sqrt(np.sum(w[:, None] * (new_trace - trace) ** 2)))
            trace = new_trace
            if np.array_equal(new_flux, flux) or diff < tol:
                break
            flux = new_flux
        else:
            raise SolverError(f"slab {s} did not contract within {max_iter} iterations "
                              f"(last difference {diff:.3g}); reduce dt")
        worst_iter = max(worst_iter, it)
        last_diff = max(last_diff, diff if np.isfinite(diff) else 0.0)
        u = states[-1]
        times.extend((t0 + tau * np.arange(1, m + 1)).tolist())
        traces.extend(trace[1:].tolist())
        t0 += length
    log.debug("evolve_iteration: %d slabs, at most %d iterations", n_slabs, worst_iter)
    return EvolutionResult(GridFunction(u, f.grid), float(t), "iteration", n_slabs, last_diff,
                           flags + (f"max_iterations={worst_iter}",),
                           np.array(times), np.array(traces))


def dalembert_residual(p: NeumannProblem, result: EvolutionResult, f: GridFunction,
                       psi: GridFunction) -> float:
    """Defect of the variation-of-constants identity for the converged iterate

        <ψ, u(t)> = <S_t ψ, f> + ½ ∫_0^t Σ_Γ (S_{t-s}ψ)(y) (g(y) - β(u(s, y))) ds,

    S being the discrete linear Neumann semigroup with decay α.
    """
    if result.trace_times is None:
        raise ValueError("result carries no boundary trace history")
    sg = RobinHeatSemigroup(p.grid, p.alpha)
    w = p.grid.weights
    t = result.t
    lhs = float(np.dot(w, psi.values * result.u.values))
    c = sg.to_modal(np.array(psi.values))
    first = float(np.dot(w, sg.from_modal(sg.decay(t) * c) * f.values))
    s = result.trace_times
    # boundary values of S_{t-s} ψ for every s
    ends = sg.modes[[0, -1], :]
    decays = np.exp(np.outer(t - s, sg.rates))
    kern = (decays * c[None, :]) @ ends.T
    tr = result.trace_values
    flux = p.boundary_flux(tr[:, 0], tr[:, 1])
    integrand = np.sum(kern * flux, axis=1)
    second = 0.5 * float(trapezoid(integrand, s))
    return abs(lhs - first - second)


def energy_phi(p: NeumannProblem, u: GridFunction) -> float:
    """Discrete potential Φ with A = ∂Φ:

        Φ(u) = ¼∫|u'|² + ½Σ_Γ j(u) - ½Σ_Γ g u + (α/2)∫u².
    """
    v = u.values
    grad = 0.25 * float(np.sum(np.diff(v) ** 2)) / p.h
    ends = np.array(u.trace())
    bnd = 0.5 * float(np.sum(p.mech.j(ends))) - 0.5 * float(np.dot(p.g, ends))
    bulk = 0.5 * p.alpha * float(np.dot(p.grid.weights, v * v))
    return grad + bnd + bulk


@dataclass(frozen=True)
class WeightFunction:
    """φ = exp(δψ) with ψ'' = K, ∂ψ/∂ν = L/δ, K = 2L/δ on the unit interval."""

    alpha: float
    L: float
    delta: float
    values: np.ndarray

    def norm(self, v: np.ndarray) -> float:
        return float(np.max(np.abs(v * self.values)))


def weight_function(grid: Grid1D, alpha: float, L: float) -> WeightFunction:
    if L < 0:
        raise ValueError("L must be nonnegative")
    delta = min(1.0, 1.0 / (2.0 * L + 1.0))
    x = grid.x
    if L == 0:
        phi = np.ones_like(x)
        return WeightFunction(alpha, L, delta, phi)
    K = 2.0 * L / delta
    psi = 0.5 * K * (x - 0.5) ** 2
    dpsi = K * (x - 0.5)
    phi = np.exp(delta * psi)
    # 1/φ = exp(-δψ): (1/φ)'' = (δ²ψ'² - δψ'') / φ
    phi_lap_inv = delta**2 * dpsi**2 - delta * K
    cond_interior = 2.0 * alpha - phi_lap_inv
    cond_boundary = delta * np.array([-dpsi[0], dpsi[-1]])
    bad = np.flatnonzero(cond_interior < -1e-12)
    if phi.min() <= 0 or bad.size:
        j = int(bad[0]) if bad.size else int(np.argmin(phi))
        raise SolverError(f"weight construction fails at node {j} (x={x[j]:.4g}): "
                          f"2α - φΔ(1/φ) = {cond_interior[j]:.4g}")
    if np.any(cond_boundary < L * (1 - 1e-12)):
        raise SolverError(f"weight construction fails on the boundary: "
                          f"∂_νφ/φ = {cond_boundary} < L = {L}")
    return WeightFunction(alpha, L, delta, phi)


def weighted_norm(u: GridFunction, alpha: float, L: float) -> float:
    """sup_x |u(x) φ(x)| for the weight of the quasi-contraction estimate."""
    return weight_function(u.grid, alpha, L).norm(u.values)
