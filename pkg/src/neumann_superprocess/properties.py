"""Randomized property batteries for the nonlinear semigroup V_t.

Each battery draws admissible problems and nonnegative inputs from a
seeded generator, runs the Crandall-Liggett solver on a coarse grid and
counts violations of one structural property.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid1d import Grid1D, GridFunction
from .mechanism import BranchingMechanism, gram_nd_test, steklov_gamma
from .pde import NeumannProblem, energy_phi, evolve_cl, resolvent, weight_function


@dataclass
class BatteryResult:
    name: str
    trials: int
    violations: int = 0
    worst: float = -math.inf
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"name": self.name, "trials": self.trials, "violations": self.violations,
                "worst": float(self.worst), "passed": self.passed, **self.details}


def random_problem(rng: np.random.Generator, grid: Grid1D, with_g: bool = True) -> NeumannProblem:
    """Admissible problem with 0-3 atoms filling a random fraction of the Steklov budget."""
    alpha = rng.uniform(0.2, 2.0)
    gam = steklov_gamma(alpha)
    n_atoms = int(rng.integers(0, 4))
    s = rng.uniform(0.2, 2.0, n_atoms)
    w = rng.uniform(0.1, 1.0, n_atoms)
    b = rng.uniform(0.0, 1.0)
    budget = rng.uniform(0.0, 0.99) * gam
    scale = budget / (float(s @ w) + b) if (n_atoms or b > 0) else 0.0
    mech = BranchingMechanism(tuple(zip(s, w * scale)), b * scale)
    g = tuple(rng.uniform(0, 1, 2)) if with_g and rng.random() < 0.5 else (0.0, 0.0)
    return NeumannProblem(alpha, mech, g, grid)


def random_input(rng: np.random.Generator, grid: Grid1D, amp: float = 3.0) -> GridFunction:
    """Nonnegative smooth function: a positive offset plus a few cosine modes, clipped at 0."""
    k = np.arange(1, 5)
    coef = rng.normal(0, 1, 4) / k
    v = rng.uniform(0, amp) + np.cos(np.pi * np.outer(grid.x, k)) @ coef
    return GridFunction(np.maximum(v, 0.0), grid)


def _setup(seed, n_grid):
    return np.random.default_rng(seed), Grid1D(n_grid)


def battery_l2_contraction(n_trials=500, seed=0, n_grid=41, n_steps=32, t=0.5, tol=1e-9):
    rng, grid = _setup(seed, n_grid)
    res = BatteryResult("l2_contraction", n_trials)
    w = grid.weights
    for _ in range(n_trials):
        p = random_problem(rng, grid)
        f, fb = random_input(rng, grid), random_input(rng, grid)
        d0 = math.sqrt(float(w @ (f.values - fb.values) ** 2))
        d1 = math.sqrt(float(w @ (evolve_cl(p, f, t, n_steps).u.values
                                  - evolve_cl(p, fb, t, n_steps).u.values) ** 2))
        ratio = d1 / d0 if d0 > 0 else 0.0
        res.worst = max(res.worst, ratio)
        res.violations += int(ratio > 1.0 + tol)
    return res


def battery_order(n_trials=500, seed=1, n_grid=41, n_steps=32, t=0.5, tol=1e-10):
    rng, grid = _setup(seed, n_grid)
    res = BatteryResult("order_preservation", n_trials)
    for _ in range(n_trials):
        p = random_problem(rng, grid)
        f1 = random_input(rng, grid)
        f2 = f1 + random_input(rng, grid, amp=1.0)
        gap = evolve_cl(p, f1, t, n_steps).u.values - evolve_cl(p, f2, t, n_steps).u.values
        res.worst = max(res.worst, float(gap.max()))
        res.violations += int(gap.max() > tol)
    return res


def battery_lower_bound(n_trials=500, seed=2, n_grid=41, n_steps=32, t=0.5, tol=1e-10):
    """f >= c  ⇒  V_t f >= e^{-αt} c."""
    rng, grid = _setup(seed, n_grid)
    res = BatteryResult("lower_bound", n_trials)
    for _ in range(n_trials):
        p = random_problem(rng, grid)
        f = random_input(rng, grid)
        c = float(f.values.min())
        v = evolve_cl(p, f, t, n_steps).u.values
        # the implicit scheme decays constants by (1 + αt/n)^{-n} >= e^{-αt}
        deficit = math.exp(-p.alpha * t) * c - float(v.min())
        res.worst = max(res.worst, deficit)
        res.violations += int(deficit > tol)
    return res


def battery_weighted(n_trials=500, seed=3, n_grid=41, n_steps=32, t=0.5, tol=1e-9):
    """‖V_t f - V_t f̄‖_* <= e^{αt} ‖f - f̄‖_* in the φ-weighted sup norm."""
    rng, grid = _setup(seed, n_grid)
    res = BatteryResult("weighted_quasi_contraction", n_trials)
    for _ in range(n_trials):
        p = random_problem(rng, grid)
        wf = weight_function(grid, p.alpha, p.mech.lipschitz)
        f, fb = random_input(rng, grid), random_input(rng, grid)
        d0 = wf.norm(f.values - fb.values)
        d1 = wf.norm(evolve_cl(p, f, t, n_steps).u.values - evolve_cl(p, fb, t, n_steps).u.values)
        ratio = d1 / (math.exp(p.alpha * t) * d0) if d0 > 0 else 0.0
        res.worst = max(res.worst, ratio)
        res.violations += int(ratio > 1.0 + tol)
    return res


def battery_energy(n_trials=500, seed=4, n_grid=41, n_steps=16, t=0.5, tol=1e-10):
    """Φ does not increase along the implicit steps."""
    rng, grid = _setup(seed, n_grid)
    res = BatteryResult("energy_nonincreasing", n_trials)
    lam = t / n_steps
    for _ in range(n_trials):
        p = random_problem(rng, grid)
        u = random_input(rng, grid)
        e_prev = energy_phi(p, u)
        for _ in range(n_steps):
            u = resolvent(p, u, lam)
            e = energy_phi(p, u)
            inc = (e - e_prev) / max(1.0, abs(e_prev))
            res.worst = max(res.worst, inc)
            res.violations += int(inc > tol)
            e_prev = e
    return res


def battery_gram(n_trials=500, seed=5, n_grid=41, n_steps=32, t=0.5, k=3, rtol=1e-9):
    """f ↦ V_t f(x) is negative definite: zero-sum Gram sums are <= 0."""
    rng, grid = _setup(seed, n_grid)
    res = BatteryResult("gram_negative_definite", n_trials)
    for _ in range(n_trials):
        p = random_problem(rng, grid, with_g=False)
        pts = [random_input(rng, grid, amp=1.5) for _ in range(k)]
        c = rng.normal(size=k)
        c -= c.mean()
        j = int(rng.integers(0, grid.n))
        cache: dict[int, float] = {}

        def phi(u, j=j, p=p, cache=cache):
            key = hash(u.values.tobytes())
            if key not in cache:
                cache[key] = float(evolve_cl(p, u, t, n_steps).u.values[j])
            return cache[key]

        val = gram_nd_test(phi, pts, c)
        scale = max(abs(v) for v in cache.values()) * float(np.abs(c).sum()) ** 2
        res.worst = max(res.worst, val / max(scale, 1e-300))
        res.violations += int(val > rtol * scale)
    return res


BATTERIES = {
    "l2_contraction": battery_l2_contraction,
    "order_preservation": battery_order,
    "lower_bound": battery_lower_bound,
    "weighted_quasi_contraction": battery_weighted,
    "energy_nonincreasing": battery_energy,
    "gram_negative_definite": battery_gram,
}


def run_property_suite(n_trials: int = 500, seed: int = 0) -> dict[str, BatteryResult]:
    return {name: fn(n_trials=n_trials, seed=seed + i) for i, (name, fn) in enumerate(BATTERIES.items())}
