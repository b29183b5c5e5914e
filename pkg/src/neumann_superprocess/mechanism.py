"""Branching mechanisms with finitely many jump atoms.

A mechanism is the pair (eta, b) where eta = sum_i w_i delta_{s_i}; it
defines

    beta(u) = sum_i w_i (exp(-s_i u) - 1) - b u   for u >= 0,
    beta(u) = 0                                  for u < 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma as gamma_fn
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded


@dataclass(frozen=True)
class BranchingMechanism:
    atoms: tuple[tuple[float, float], ...] = ()
    b: float = 0.0
    sizes: np.ndarray = field(init=False, repr=False, compare=False)
    masses: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = tuple((float(s), float(w)) for s, w in self.atoms)
        for s, w in atoms:
            if not (s > 0 and w > 0 and np.isfinite(s) and np.isfinite(w)):
                raise ValueError(f"atom (s={s}, w={w}) must have s > 0 and w > 0")
        if not (self.b >= 0 and np.isfinite(self.b)):
            raise ValueError(f"b must be a finite nonnegative number, got {self.b}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "sizes", np.array([s for s, _ in atoms], dtype=float))
        object.__setattr__(self, "masses", np.array([w for _, w in atoms], dtype=float))

    @property
    def total_mass(self) -> float:
        """eta(R_+), the total jump intensity per unit boundary mass."""
        return float(self.masses.sum())

    @property
    def first_moment(self) -> float:
        return float(np.dot(self.sizes, self.masses))

    @property
    def lipschitz(self) -> float:
        """Lipschitz bound of beta: |beta'(0+)| = sum w_i s_i + b."""
        return self.first_moment + self.b

    @property
    def is_trivial(self) -> bool:
        return not self.atoms and self.b == 0.0

    def beta(self, u):
        u = np.asarray(u, dtype=float)
        up = np.maximum(u, 0.0)
        jumps = np.expm1(-np.multiply.outer(up, self.sizes)) @ self.masses if self.atoms else 0.0 * up
        return np.where(u >= 0, jumps - self.b * up, 0.0)

    def dbeta(self, u):
        """Derivative of beta; the right derivative at 0."""
        u = np.asarray(u, dtype=float)
        up = np.maximum(u, 0.0)
        if self.atoms:
            d = -np.exp(-np.multiply.outer(up, self.sizes)) @ (self.masses * self.sizes)
        else:
            d = 0.0 * up
        return np.where(u >= 0, d - self.b, 0.0)

    def j(self, r):
        """Primitive j(r) = int_0^r beta(s) ds."""
        r = np.asarray(r, dtype=float)
        rp = np.maximum(r, 0.0)
        if self.atoms:
            per_atom = -np.expm1(-np.multiply.outer(rp, self.sizes)) / self.sizes - rp[..., None]
            jumps = per_atom @ self.masses
        else:
            jumps = 0.0 * rp
        return np.where(r >= 0, jumps - 0.5 * self.b * rp**2, 0.0)

    def to_dict(self) -> dict:
        return {"atoms": [[s, w] for s, w in self.atoms], "b": self.b}


def eval_beta(mech: BranchingMechanism, u: float) -> float:
    return float(mech.beta(u))


def truncated_stable(m: float, N: float, n_nodes: int = 400) -> BranchingMechanism:
    """Atom approximation of the density m/Gamma(1-m) s^(-m-1) on (0, N].

    Nodes are geometric on (N*1e-8, N]; weights come from the midpoint rule
    in log s.
    """
    if not 0.0 < m < 1.0:
        raise ValueError(f"stable index m must lie in (0, 1), got {m}")
    if N <= 0:
        raise ValueError(f"truncation N must be positive, got {N}")
    if n_nodes < 1:
        raise ValueError("n_nodes must be positive")
    lo, hi = np.log(N * 1e-8), np.log(N)
    dt = (hi - lo) / n_nodes
    s = np.exp(lo + dt * (np.arange(n_nodes) + 0.5))
    w = m / gamma_fn(1.0 - m) * s ** (-m) * dt
    return BranchingMechanism(tuple(zip(s, w)), 0.0)


def _steklov_schur(alpha: float, n_grid: int) -> np.ndarray:
    """2x2 Schur complement of (stiffness/2 + alpha*mass) onto the endpoint values."""
    h = 1.0 / (n_grid - 1)
    diag = np.full(n_grid, 1.0 / h + alpha * 2.0 * h / 3.0)
    diag[0] = diag[-1] = 0.5 / h + alpha * h / 3.0
    off = -0.5 / h + alpha * h / 6.0
    # interior block solve for the two boundary couplings
    ni = n_grid - 2
    ab = np.zeros((3, ni))
    ab[0, 1:] = off
    ab[1, :] = diag[1:-1]
    ab[2, :-1] = off
    rhs = np.zeros((ni, 2))
    rhs[0, 0] = off
    rhs[-1, 1] = off
    y = solve_banded((1, 1), ab, rhs)
    S = np.diag([diag[0], diag[-1]])
    S -= np.array([[off * y[0, 0], off * y[0, 1]], [off * y[-1, 0], off * y[-1, 1]]])
    return 0.5 * (S + S.T)


def steklov_gamma(alpha: float, n_grid: int = 2000) -> float:
    """Discrete Steklov constant: min of (½||v'||² + α||v||²) / (v(0)² + v(1)²).

    Piecewise-linear elements; minimising over interior values leaves a 2x2
    problem on the endpoint values. On [0, 1] the exact value is
    (k/2) tanh(k/2), k = sqrt(2 alpha).
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive (the infimum is 0 at alpha={alpha})")
    if n_grid < 3:
        raise ValueError("n_grid must be at least 3")
    return float(np.linalg.eigvalsh(_steklov_schur(alpha, n_grid))[0])


def steklov_gamma_exact(alpha: float) -> float:
    k = np.sqrt(2.0 * alpha)
    return float(0.5 * k * np.tanh(0.5 * k))


@dataclass(frozen=True)
class AdmissibilityReport:
    gamma: float
    moment: float
    admissible: bool
    lipschitz: float
    monotone: bool

    def message(self) -> str:
        rel = "<=" if self.admissible else ">"
        return (f"first moment + b = {self.moment:.6g} {rel} gamma = {self.gamma:.6g}"
                + ("" if self.admissible else " (admissibility condition violated)"))


def check_admissible(mech: BranchingMechanism, alpha: float, n_grid: int = 2000,
                     u_max: float = 50.0, n_samples: int = 2001) -> AdmissibilityReport:
    # alpha = 0 has infimum 0, which only the trivial mechanism satisfies
    gam = steklov_gamma(alpha, n_grid) if alpha > 0 else 0.0
    moment = mech.lipschitz
    u = np.linspace(0.0, u_max, n_samples)
    shifted = mech.beta(u) + gam * u
    monotone = bool(np.all(np.diff(shifted) >= -1e-12 * max(1.0, gam * u_max)))
    return AdmissibilityReport(gam, moment, bool(moment <= gam), moment, monotone)


def gram_sum(phi: Callable, points: Sequence, coeffs: Sequence[float]) -> float:
    """sum_{i,j} c_i c_j phi(u_i + u_j)."""
    c = np.asarray(coeffs, dtype=float)
    if len(points) != len(c):
        raise ValueError(f"{len(points)} points but {len(c)} coefficients")
    n = len(c)
    total = 0.0
    for i in range(n):
        for j in range(i, n):
            v = float(phi(points[i] + points[j]))
            total += (1.0 if i == j else 2.0) * c[i] * c[j] * v
    return total


def gram_nd_test(phi: Callable, points: Sequence, coeffs: Sequence[float],
                 tol: float = 1e-12) -> float:
    """Gram sum for the negative-definiteness test (coefficients must sum to 0).

    A negative definite phi gives a value <= 0 up to rounding.
    """
    c = np.asarray(coeffs, dtype=float)
    if len(points) != len(c):
        raise ValueError(f"{len(points)} points but {len(c)} coefficients")
    if len(c) < 2:
        raise ValueError("need at least two points")
    if abs(c.sum()) > tol * max(1.0, np.abs(c).sum()):
        raise ValueError(f"coefficients must sum to zero, got {c.sum():.3g}")
    return gram_sum(phi, points, c)


def gram_pd_test(phi: Callable, points: Sequence, coeffs: Sequence[float]) -> float:
    """Gram sum for positive definiteness (no constraint on the coefficients)."""
    if len(points) != len(coeffs) or len(coeffs) < 1:
        raise ValueError("need matching, non-empty points and coefficients")
    return gram_sum(phi, points, coeffs)


def nd_violation(gram: float, phi_scale: float, rtol: float = 1e-9) -> bool:
    """True when a negative-definiteness Gram sum is positive beyond rounding."""
    return gram > rtol * max(phi_scale, 1e-300)
