"""Uniform finite-difference discretization of the closed unit interval.

The boundary consists of the two endpoints with counting surface measure.
Integrals use the trapezoidal rule, which coincides with the lumped-mass
weights of piecewise-linear elements.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"grid needs at least 3 nodes, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights (sum to 1)."""
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def function(self, values) -> "GridFunction":
        """Wrap values, or sample a callable at the nodes."""
        if callable(values):
            values = values(self.x)
        return GridFunction(np.broadcast_to(np.asarray(values, dtype=float), (self.n,)).copy(), self)

    def nearest_node(self, x: float) -> int:
        return int(np.clip(np.rint(x / self.h), 0, self.n - 1))


@dataclass(frozen=True, eq=False)
class GridFunction:
    values: np.ndarray
    grid: Grid1D

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def trace(self) -> tuple[float, float]:
        return float(self.values[0]), float(self.values[-1])

    def __call__(self, x):
        """Piecewise-linear interpolation."""
        return np.interp(x, self.grid.x, self.values)

    def _coerce(self, other):
        if isinstance(other, GridFunction):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.values + self._coerce(other), self.grid)

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.values - self._coerce(other), self.grid)

    def __rsub__(self, other):
        return GridFunction(self._coerce(other) - self.values, self.grid)

    def __mul__(self, other):
        return GridFunction(self.values * self._coerce(other), self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(-self.values, self.grid)

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2_norm(self) -> float:
        return float(np.sqrt(inner(self, self)))

    def to_csv(self, path) -> None:
        write_csv(path, self.grid.x, self.values, header=("x", "value"))

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        x, v = read_csv(path)
        grid = Grid1D(len(x))
        if not np.allclose(x, grid.x, rtol=0, atol=1e-12):
            raise ValueError(f"{path}: nodes are not a uniform grid on [0, 1]")
        return cls(v, grid)


def _check_same_grid(f: GridFunction, g: GridFunction) -> None:
    if f.grid.n != g.grid.n:
        raise ValueError(f"grid mismatch: {f.grid.n} vs {g.grid.n} nodes")


def second_difference(v: np.ndarray, h: float) -> np.ndarray:
    """Second derivative: 3-point interior stencil, 4-point one-sided at the ends."""
    d2 = np.empty_like(v)
    d2[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h**2
    if len(v) >= 4:
        d2[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
        d2[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    else:
        d2[0], d2[-1] = d2[1], d2[-2]
    return d2


def laplace_half(f: GridFunction) -> GridFunction:
    """Apply ½Δ (standalone form, one-sided second-order rows at the boundary)."""
    return GridFunction(0.5 * second_difference(f.values, f.grid.h), f.grid)


def normal_derivative_values(v: np.ndarray, h: float) -> tuple[float, float]:
    d0 = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    d1 = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return -d0, d1


def normal_derivative(f: GridFunction) -> tuple[float, float]:
    """Outward normal derivative (-f'(0), f'(1)), second order."""
    if f.grid.n < 4:
        raise ValueError("normal_derivative needs n >= 4")
    d0, d1 = normal_derivative_values(f.values, f.grid.h)
    return float(d0), float(d1)


def inner(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f, g)
    return float(np.dot(f.grid.weights, f.values * g.values))


def boundary_inner(f: GridFunction, g: GridFunction) -> float:
    _check_same_grid(f, g)
    return float(f.values[0] * g.values[0] + f.values[-1] * g.values[-1])


def green_residual(u: GridFunction, v: GridFunction) -> float:
    """Defect of the discrete Green identity
    ∫(uΔv - vΔu) = Σ_Γ (u ∂_ν v - v ∂_ν u).
    """
    _check_same_grid(u, v)
    h = u.grid.h
    lu = second_difference(u.values, h)
    lv = second_difference(v.values, h)
    bulk = float(np.dot(u.grid.weights, u.values * lv - v.values * lu))
    du = normal_derivative_values(u.values, h)
    dv = normal_derivative_values(v.values, h)
    ub, vb = (u.values[0], u.values[-1]), (v.values[0], v.values[-1])
    surface = sum(ub[i] * dv[i] - vb[i] * du[i] for i in range(2))
    return abs(bulk - surface)


def write_csv(path, x, values, header=("x", "value")) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for xi, vi in zip(x, values):
            w.writerow([f"{xi:.17g}", f"{vi:.17g}"])


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    return data[:, 0], data[:, 1]


def half_stiffness_banded(grid: Grid1D) -> np.ndarray:
    """Matrix of the form (u, v) -> ½∫u'v' (piecewise-linear), LAPACK banded (1,1) layout."""
    n, h = grid.n, grid.h
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 / h
    ab[1, :] = 1.0 / h
    ab[1, 0] = ab[1, -1] = 0.5 / h
    ab[2, :-1] = -0.5 / h
    return ab


class RobinHeatSemigroup:
    """Exact-in-time propagator of the semi-discrete problem

        ρ' = ½Δρ - αρ  in (0, 1),   ½ ∂_ν ρ = κ ρ  on {0, 1},

    discretized with lumped piecewise-linear elements (equivalently the
    3-point stencil with ghost-node boundary rows). The operator is
    self-adjoint for the trapezoidal inner product, so it is diagonalized
    once and propagated through its modes; positivity is preserved exactly.
    """

    def __init__(self, grid: Grid1D, alpha: float, kappa: float = 0.0):
        self.grid = grid
        self.alpha = float(alpha)
        self.kappa = float(kappa)
        n = grid.n
        ab = half_stiffness_banded(grid)
        K = np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[2, :-1], -1)
        K[0, 0] -= self.kappa
        K[-1, -1] -= self.kappa
        self.sqrt_w = np.sqrt(grid.weights)
        S = K / np.outer(self.sqrt_w, self.sqrt_w)
        lam, Q = np.linalg.eigh(0.5 * (S + S.T))
        self.rates = -lam - self.alpha  # eigenvalues of the generator (<= 0 when stable)
        # nodal value = sum_k modes[j, k] c_k, c_k = coeff_map[k, :] @ ρ
        self.modes = Q / self.sqrt_w[:, None]
        self.coeff_map = Q.T * self.sqrt_w[None, :]
        self._n = n

    def to_modal(self, rho: np.ndarray) -> np.ndarray:
        return self.coeff_map @ rho

    def from_modal(self, c: np.ndarray) -> np.ndarray:
        return self.modes @ c

    def decay(self, t: float) -> np.ndarray:
        return np.exp(self.rates * t)

    def propagate(self, rho: np.ndarray, t: float) -> np.ndarray:
        return self.from_modal(self.decay(t) * self.to_modal(rho))

    def matrix(self, t: float) -> np.ndarray:
        return (self.modes * self.decay(t)) @ self.coeff_map
