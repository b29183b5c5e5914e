"""
Generators on exponential functionals
=====================================

A forward difference of t -> E_mu[exp(-<f, X_t>)] at small t is compared
with the closed-form generator, term by term.
"""
import numpy as np
from scipy.optimize import root

from neumann_superprocess import BranchingMechanism, Grid1D, Measure, NeumannProblem
from neumann_superprocess.measures import (
    ExpFunctional, exp_eval, generator_L, generator_L_terms, q_kernel,
)

grid = Grid1D(401)
p = NeumannProblem(0.5, BranchingMechanism(((1.0, 0.2),), 0.03), (0.3, 0.1), grid)

# a quadratic that satisfies the nonlinear boundary condition, so f is in the domain
def bc(z, c0=1.0):
    c1, a = z
    return [-c1 + float(p.mech.beta(c0)) - p.g[0], c1 + 2 * a + float(p.mech.beta(c0 + c1 + a)) - p.g[1]]

c1, a = root(bc, [0.0, 0.0], tol=1e-14).x
F = ExpFunctional(grid.function(lambda x: 1.0 + c1 * x + a * x * x))
mu = Measure.from_density(lambda x: 2 - x, grid)

for name, val in generator_L_terms(p, F, mu).items():
    print("%-10s %+.6f" % (name, val))
exact = generator_L(p, F, mu)
for tau in (1e-2, 1e-3, 1e-4):
    fd = (q_kernel(p, F, mu, tau, 32) - exp_eval(F, mu)) / tau
    print("tau=%.0e  forward difference %+.6f   generator %+.6f   rel err %.1e"
          % (tau, fd, exact, abs(fd / exact - 1)))
