"""Boundary dynamics on Γ = {0, 1}.

The Dirichlet-to-Neumann map N sends boundary data φ to the outward
normal derivative of the solution of ½u'' - αu = 0 with u|_Γ = φ. The
nonlinear boundary evolution is dv/dt = -Nv - β(v), and its branching
process lives on M(Γ) ≅ R²₊.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm, solve_banded
from scipy.optimize import brentq

from .grid1d import Grid1D, GridFunction, normal_derivative_values
from .measures import ExpFunctional, Measure, generator_L
from .mechanism import BranchingMechanism
from .pde import NeumannProblem, SolverError
from .pdmp import SimConfig, SimResult, log_mean_estimate, path_rng, _chunks


@dataclass(frozen=True, eq=False)
class DtNOperator:
    alpha: float
    matrix: np.ndarray

    @property
    def k(self) -> float:
        return math.sqrt(2.0 * self.alpha)

    def __matmul__(self, phi):
        return self.matrix @ np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class BoundaryState:
    m: tuple[float, float]

    def __post_init__(self):
        m = tuple(float(v) for v in self.m)
        if len(m) != 2 or min(m) < 0 or not all(map(math.isfinite, m)):
            raise ValueError(f"boundary state must be a nonnegative pair, got {self.m}")
        object.__setattr__(self, "m", m)


def dtn(alpha: float) -> DtNOperator:
    """Closed form k [[coth k, -csch k], [-csch k, coth k]], k = sqrt(2α)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    k = math.sqrt(2.0 * alpha)
    c, s = 1.0 / math.tanh(k), 1.0 / math.sinh(k)
    return DtNOperator(float(alpha), k * np.array([[c, -s], [-s, c]]))


def _extension_values(alpha: float, phi, grid: Grid1D) -> np.ndarray:
    """Solve -½u'' + αu = 0 on the interior nodes with u = φ at the ends."""
    n, h = grid.n, grid.h
    ni = n - 2
    ab = np.zeros((3, ni))
    ab[0, 1:] = ab[2, :-1] = -0.5 / h**2
    ab[1, :] = 1.0 / h**2 + alpha
    rhs = np.zeros(ni)
    rhs[0] += 0.5 / h**2 * phi[0]
    rhs[-1] += 0.5 / h**2 * phi[1]
    u = np.empty(n)
    u[0], u[-1] = phi
    u[1:-1] = solve_banded((1, 1), ab, rhs)
    return u


def harmonic_extension(op: DtNOperator, phi, grid: Grid1D | None = None) -> GridFunction:
    grid = grid or Grid1D(401)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (2,):
        raise ValueError("phi must be a pair")
    return GridFunction(_extension_values(op.alpha, phi, grid), grid)


def dtn_discrete(alpha: float, n_grid: int = 401) -> DtNOperator:
    """Finite-difference DtN matrix: extend unit data, take one-sided normal derivatives."""
    grid = Grid1D(n_grid)
    cols = []
    for e in np.eye(2):
        u = _extension_values(alpha, e, grid)
        cols.append(normal_derivative_values(u, grid.h))
    M = np.array(cols).T
    return DtNOperator(float(alpha), 0.5 * (M + M.T))


def _pair(f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (2,):
        raise ValueError(f"expected a pair, got shape {f.shape}")
    return f


def _newton2(residual, jac, x0, tol=1e-12, max_iter=50):
    x = x0.copy()
    for it in range(max_iter):
        r = residual(x)
        if np.max(np.abs(r)) <= tol:
            return x
        dx = np.linalg.solve(jac(x), -r)
        step = 1.0
        norm0 = np.max(np.abs(r))
        while step > 1e-8 and np.max(np.abs(residual(x + step * dx))) > (1 - 1e-4 * step) * norm0:
            step *= 0.5
        x = x + step * dx
    if np.max(np.abs(residual(x))) <= tol * 10:
        return x
    raise SolverError(f"boundary Newton failed after {max_iter} iterations")


def boundary_resolvent(op: DtNOperator, mech: BranchingMechanism, f, lam: float) -> np.ndarray:
    """φ solving φ + λ(Nφ + β(φ)) = f."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    f = _pair(f)
    N = op.matrix
    if not mech.atoms and mech.b == 0.0:
        return np.linalg.solve(np.eye(2) + lam * N, f)

    def residual(x):
        return x + lam * (N @ x + mech.beta(x)) - f

    def jac(x):
        return np.eye(2) + lam * (N + np.diag(mech.dbeta(x)))

    x0 = np.linalg.solve(np.eye(2) + lam * N, f)
    return _newton2(residual, jac, x0, tol=1e-13 * max(1.0, np.max(np.abs(f))))


def evolve_W(op: DtNOperator, mech: BranchingMechanism, f, t: float, n_steps: int = 1024) -> np.ndarray:
    """Exponential formula: n_steps implicit steps of length t/n_steps."""
    f = _pair(f)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return f.copy()
    lam = t / n_steps
    v = f
    for _ in range(n_steps):
        v = boundary_resolvent(op, mech, v, lam)
    return v


def _exp_trapezoid(M: np.ndarray, nonlin, dnonlin, f: np.ndarray, t: float, dt: float) -> np.ndarray:
    """v(t) = e^{-Mt} f + ∫₀ᵗ e^{-M(t-s)} nonlin(v(s)) ds, trapezoid in s.

    On a uniform grid the trapezoidal convolution obeys the one-step
    recursion v_{n+1} = E(v_n + ½dt·nonlin(v_n)) + ½dt·nonlin(v_{n+1}),
    E = e^{-M dt}, solved by Newton at each step.
    """
    if t == 0:
        return f.copy()
    n = max(1, int(math.ceil(t / dt - 1e-12)))
    dt = t / n
    E = expm(-M * dt)
    v = f.copy()
    for _ in range(n):
        known = E @ (v + 0.5 * dt * nonlin(v))
        v = _newton2(lambda x: x - 0.5 * dt * nonlin(x) - known,
                     lambda x: np.eye(2) - 0.5 * dt * np.diag(dnonlin(x)),
                     known, tol=1e-14 * max(1.0, np.max(np.abs(known))))
    return v


def evolve_W_duhamel(op: DtNOperator, mech: BranchingMechanism, f, t: float,
                     dt: float = 1e-3) -> np.ndarray:
    """Variation of constants around e^{-Nt}: W_t f = e^{-Nt}f - ∫ e^{-N(t-s)} β(W_s f) ds."""
    f = _pair(f)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return _exp_trapezoid(op.matrix, lambda x: -mech.beta(x), lambda x: -mech.dbeta(x), f, t, dt)


def evolve_W_loglaplace(op: DtNOperator, mech: BranchingMechanism, f, t: float,
                        dt: float = 1e-3) -> np.ndarray:
    """Fixed point around S_t = e^{-(N - α)t}: W = S_t f - ∫ S_{t-s}(αW_s + β(W_s)) ds.

    The shift by α in the generator of S_t is compensated by the -αW term.
    """
    f = _pair(f)
    if t < 0:
        raise ValueError("t must be nonnegative")
    a = op.alpha
    return _exp_trapezoid(op.matrix - a * np.eye(2), lambda x: -a * x - mech.beta(x),
                          lambda x: -a - mech.dbeta(x), f, t, dt)


class _BoundaryPaths:
    """Exact simulation of the PDMP on R²₊ with drift dm/dt = -(N - bI)m.

    The drift is diagonalized once; the total event rate along the flow is a
    sum of exponentials, so event times come from inverting its integral.
    """

    def __init__(self, op: DtNOperator, mech: BranchingMechanism):
        self.mech = mech
        lam, Q = np.linalg.eigh(op.matrix)
        self.d = -lam + mech.b
        self.Q = Q
        self.ones_q = Q.sum(axis=0)
        self.total_w = mech.total_mass
        if mech.atoms:
            self.size_cdf = np.cumsum(mech.masses) / mech.total_mass

    def flow(self, m: np.ndarray, s: float) -> np.ndarray:
        return np.maximum(self.Q @ (np.exp(self.d * s) * (self.Q.T @ m)), 0.0)

    def integrated_rate(self, m: np.ndarray, s: float) -> float:
        a = self.ones_q * (self.Q.T @ m)
        ds = self.d * s
        growth = np.where(np.abs(ds) > 1e-12, np.expm1(ds) / np.where(self.d == 0, 1, self.d), s)
        return self.total_w * float(a @ growth)

    def run(self, m: np.ndarray, t: float, rng: np.random.Generator) -> np.ndarray:
        elapsed = 0.0
        while self.total_w > 0:
            remaining = t - elapsed
            e = rng.standard_exponential()
            if self.integrated_rate(m, remaining) <= e:
                break
            s = brentq(lambda x: self.integrated_rate(m, x) - e, 0.0, remaining,
                       xtol=1e-14, rtol=1e-13)
            m = self.flow(m, s)
            elapsed += s
            y = 0 if rng.random() * m.sum() < m[0] else 1
            i = min(int(np.searchsorted(self.size_cdf, rng.random(), side="right")),
                    len(self.size_cdf) - 1)
            m = m.copy()
            m[y] += self.mech.sizes[i]
        return self.flow(m, t - elapsed)


def _boundary_chunk(op, mech, m0, t, seed, start, stop):
    paths = _BoundaryPaths(op, mech)
    out = np.empty((stop - start, 2))
    for k, i in enumerate(range(start, stop)):
        out[k] = paths.run(m0.copy(), t, path_rng(seed, i))
    return out


def superprocess_simulate(op: DtNOperator, mech: BranchingMechanism, m0: BoundaryState,
                          t: float, cfg: SimConfig) -> np.ndarray:
    """Terminal states of cfg.n_paths independent paths, shape (n_paths, 2), in path order."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    m = np.array(m0.m)
    chunks = _chunks(cfg.n_paths, cfg.n_workers)
    if cfg.n_workers == 1 or len(chunks) == 1:
        parts = [_boundary_chunk(op, mech, m, t, cfg.master_seed, a, b) for a, b in chunks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as ex:
            futs = [ex.submit(_boundary_chunk, op, mech, m, t, cfg.master_seed, a, b)
                    for a, b in chunks]
            parts = [fu.result() for fu in futs]
    return np.concatenate(parts)


def mc_boundary_duality(op: DtNOperator, mech: BranchingMechanism, m0: BoundaryState, f,
                        t: float, cfg: SimConfig) -> SimResult:
    """Monte Carlo -ln E_{m0}[exp(-<f, m_t>)]."""
    f = _pair(f)
    if np.any(f < 0):
        raise ValueError("f must be nonnegative")
    terminal = superprocess_simulate(op, mech, m0, t, cfg)
    vals = np.exp(-(terminal @ f))
    est, se, flags = log_mean_estimate(vals)
    conf = asdict(cfg) | {"t": t, "alpha": op.alpha, "m0": list(m0.m), "f": f.tolist(),
                          "mechanism": mech.to_dict()}
    return SimResult(est, se, cfg.n_paths, cfg.master_seed, conf, 0, flags)


def generator_Lgamma_terms(op: DtNOperator, mech: BranchingMechanism, f, m) -> dict[str, float]:
    """Terms of the boundary generator on F = e_f at m ∈ R²₊.

    L^Γ F(m) = Σ_y m_y ( F(m)(Nf)_y + Σ_i w_i [F(m + s_i δ_y) - F(m)] + b F'(m, y) ).
    """
    f = _pair(f)
    m = np.asarray(m.m if isinstance(m, BoundaryState) else m, dtype=float)
    F = math.exp(-float(f @ m))
    drift = F * float(m @ (op.matrix @ f))
    jump = 0.0
    if mech.atoms:
        jump = F * float(sum(m[y] * (mech.masses @ np.expm1(-mech.sizes * f[y])) for y in range(2)))
    linear = -mech.b * F * float(m @ f)
    return {"drift": drift, "jump": jump, "linear": linear}


def generator_Lgamma(op: DtNOperator, mech: BranchingMechanism, f, m) -> float:
    return float(sum(generator_Lgamma_terms(op, mech, f, m).values()))


def boundary_consistency(p: NeumannProblem, f: GridFunction, mu: Measure, clock: float = 0.5) -> float:
    """Compare the interior and boundary generators on a boundary-driven functional.

    f is the α-harmonic extension of its trace φ. For the interior process
    L e_f(μ) / e_f(μ) = ½ Σ_y μ(y) [(Nφ)_y + β(φ_y)], while the boundary
    process with m = μ|_Γ has L^Γ e_φ(m) / e_φ(m) = Σ_y m_y [(Nφ)_y + β(φ_y)]:
    the interior process runs on boundary local time at half speed. Returns
    |L e_f(μ)/e_f(μ) - clock · L^Γ e_φ(m)/e_φ(m)|.
    """
    if any(g != 0 for g in p.g):
        raise ValueError("boundary consistency is defined for g = 0 only")
    if p.alpha <= 0:
        raise ValueError("alpha must be positive")
    op = dtn(p.alpha)
    phi = np.array(f.trace())
    ext = _extension_values(p.alpha, phi, f.grid)
    if np.max(np.abs(ext - f.values)) > 1e-6 * max(1.0, np.max(np.abs(phi))):
        raise ValueError("f must be the α-harmonic extension of its trace")
    F = ExpFunctional(f)
    lhs = generator_L(p, F, mu) / F(mu)
    m = np.array(mu.trace())
    rhs = generator_Lgamma(op, p.mech, phi, m) / math.exp(-float(phi @ m))
    return abs(lhs - clock * rhs)
