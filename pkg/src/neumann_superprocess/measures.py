"""Finite measures on [0, 1], exponential functionals and their generators.

A measure is a nodal density (integrated with the trapezoidal weights)
plus finitely many interior point masses. Test functionals are the
exponentials e_f(μ) = exp(-∫f dμ), f >= 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid1d import (
    Grid1D,
    GridFunction,
    RobinHeatSemigroup,
    laplace_half,
    normal_derivative_values,
    read_csv,
    second_difference,
    write_csv,
)
from .pde import NeumannProblem, evolve_cl


@dataclass(frozen=True, eq=False)
class Measure:
    density: np.ndarray
    grid: Grid1D
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        d = np.array(self.density, dtype=float)
        if d.shape != (self.grid.n,):
            raise ValueError(f"density must have {self.grid.n} nodal values")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("density must be finite and nonnegative")
        atoms = tuple((float(x), float(m)) for x, m in self.atoms)
        for x, m in atoms:
            if not (0.0 <= x <= 1.0 and m > 0):
                raise ValueError(f"atom ({x}, {m}) must sit in [0, 1] with positive mass")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def zero(cls, grid: Grid1D) -> "Measure":
        return cls(np.zeros(grid.n), grid)

    @classmethod
    def dirac(cls, grid: Grid1D, x: float, mass: float = 1.0) -> "Measure":
        return cls(np.zeros(grid.n), grid, ((x, mass),))

    @classmethod
    def from_density(cls, f, grid: Grid1D) -> "Measure":
        vals = f(grid.x) if callable(f) else f
        return cls(np.asarray(vals, dtype=float), grid)

    @property
    def total_mass(self) -> float:
        return float(np.dot(self.grid.weights, self.density) + sum(m for _, m in self.atoms))

    def trace(self) -> tuple[float, float]:
        """Boundary trace: the density's endpoint values (atoms never contribute)."""
        return float(self.density[0]), float(self.density[-1])

    def integrate(self, f: GridFunction) -> float:
        """∫ f dμ, f interpolated linearly at the atoms."""
        val = float(np.dot(self.grid.weights, f.values * self.density))
        for x, m in self.atoms:
            val += m * float(f(x))
        return val

    def deposited(self) -> "Measure":
        """Atom-free copy: each atom is moved into the cell of its nearest node."""
        d = np.array(self.density)
        w = self.grid.weights
        for x, m in self.atoms:
            j = self.grid.nearest_node(x)
            d[j] += m / w[j]
        return Measure(d, self.grid)

    def __add__(self, other: "Measure") -> "Measure":
        if other.grid.n != self.grid.n:
            raise ValueError("grid mismatch")
        return Measure(self.density + other.density, self.grid, self.atoms + other.atoms)

    def scaled(self, c: float) -> "Measure":
        return Measure(c * self.density, self.grid, tuple((x, c * m) for x, m in self.atoms if c > 0))

    def as_grid_function(self) -> GridFunction:
        if self.atoms:
            raise ValueError("measure has atoms; no density representation")
        return GridFunction(self.density, self.grid)

    def to_files(self, csv_path, json_path=None) -> None:
        write_csv(csv_path, self.grid.x, self.density, header=("x", "density"))
        json_path = Path(json_path) if json_path else Path(csv_path).with_suffix(".atoms.json")
        json_path.write_text(json.dumps([[x, m] for x, m in self.atoms]))

    @classmethod
    def from_files(cls, csv_path, json_path=None) -> "Measure":
        x, d = read_csv(csv_path)
        grid = Grid1D(len(x))
        json_path = Path(json_path) if json_path else Path(csv_path).with_suffix(".atoms.json")
        atoms = json.loads(json_path.read_text()) if json_path.exists() else []
        return cls(d, grid, tuple(map(tuple, atoms)))


@dataclass(frozen=True, eq=False)
class ExpFunctional:
    """F = e_f, μ -> exp(-∫f dμ) for f >= 0."""

    f: GridFunction

    def __post_init__(self):
        if np.any(self.f.values < 0):
            raise ValueError("exponential functionals need f >= 0")

    def __call__(self, mu: Measure) -> float:
        return exp_eval(self, mu)


def exp_eval(F: ExpFunctional, mu: Measure) -> float:
    return float(np.exp(-mu.integrate(F.f)))


def q_kernel(p: NeumannProblem, F: ExpFunctional, mu: Measure, t: float,
             n_steps: int = 256) -> float:
    """Q_t e_f(μ) = exp(-∫ V_t f dμ)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return exp_eval(F, mu)
    v = evolve_cl(p, F.f, t, n_steps).u
    return float(np.exp(-mu.integrate(v)))


def reflected_heat(f: GridFunction, t: float) -> GridFunction:
    """P_t f for the discrete reflected (Neumann) heat semigroup with generator ½Δ."""
    sg = RobinHeatSemigroup(f.grid, 0.0)
    return GridFunction(sg.propagate(np.array(f.values), t), f.grid)


def semiflow_kernel(alpha: float, f: GridFunction, mu: Measure, t: float) -> float:
    """F(μ ∘ e^{-αt}P_t) for F = e_f, via <f, μP_t> = <P_t f, μ>."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    pf = reflected_heat(f, t) if t > 0 else f
    return float(np.exp(-np.exp(-alpha * t) * mu.integrate(pf)))


def var_derivative(F: ExpFunctional, mu: Measure, x: float) -> float:
    """F'(μ, x) = -f(x) F(μ)."""
    return -float(F.f(x)) * exp_eval(F, mu)


def var_derivative_fd(F: ExpFunctional, mu: Measure, x: float, tau: float = 1e-4) -> float:
    """One-sided difference (F(μ + τδ_x) - F(μ)) / τ."""
    return (exp_eval(F, mu + Measure.dirac(mu.grid, x, tau)) - exp_eval(F, mu)) / tau


def generator_L_terms(p: NeumannProblem, F: ExpFunctional, mu: Measure) -> dict[str, float]:
    """Term-by-term generator of the measure-valued process on F = e_f.

    For a smooth density μ:

        LF(μ) = <½Δμ - αμ, F'(μ)> - ½ Σ_Γ ∂_νμ F'(μ, y)
                + ½ Σ_Γ μ(y) ( Σ_i w_i [F(μ + s_i δ_y) - F(μ)] - g(y) F(μ) + b F'(μ, y) ).

    Every boundary term carries the factor ½ of the ½Δ Green formula, and
    the linear coefficient b enters with +F' (it creates mass); this is what
    d/dt e_{V_t f}(μ) at t = 0 gives for the Neumann problem.
    """
    if mu.atoms:
        raise ValueError("generator_L needs an atom-free measure with a smooth density")
    f = F.f.values
    grid = mu.grid
    Fmu = exp_eval(F, mu)
    dens = mu.density
    lap = 0.5 * second_difference(dens, grid.h)
    dF = -f * Fmu
    drift = float(np.dot(grid.weights, (lap - p.alpha * dens) * dF))
    dn = normal_derivative_values(dens, grid.h)
    ends = (0, -1)
    flux = -0.5 * sum(dn[i] * dF[ends[i]] for i in range(2))
    mech = p.mech
    jump = kill = linear = 0.0
    for i, y in enumerate(ends):
        trace = dens[y]
        if mech.atoms:
            jump += 0.5 * trace * float(np.dot(mech.masses, Fmu * np.expm1(-mech.sizes * f[y])))
        kill -= 0.5 * trace * p.g[i] * Fmu
        linear += 0.5 * trace * mech.b * dF[y]
    return {"drift": drift, "flux": flux, "jump": jump, "kill": kill, "linear": linear}


def generator_L(p: NeumannProblem, F: ExpFunctional, mu: Measure) -> float:
    return float(sum(generator_L_terms(p, F, mu).values()))


def generator_L0(alpha: float, F: ExpFunctional, mu: Measure) -> float:
    """L⁰F(μ) = ∫μ(dx)[½ΔF'(μ, x) - αF'(μ, x)] = F(μ) ∫μ(dx)[-½Δf + αf]."""
    f = F.f
    integrand = GridFunction(-laplace_half(f).values + alpha * f.values, f.grid)
    return exp_eval(F, mu) * mu.integrate(integrand)
