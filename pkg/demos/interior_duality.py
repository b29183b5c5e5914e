"""
Deterministic and stochastic sides of the interior log-Laplace duality
=====================================================================

The nonlinear Neumann problem is solved twice, once by implicit Euler
steps and once by the fixed-point iteration, and the Monte Carlo process
started from a point mass is compared against it.
"""
import time

import numpy as np

from neumann_superprocess import BranchingMechanism, Grid1D, Measure, NeumannProblem
from neumann_superprocess import evolve_cl, evolve_iteration, mc_log_laplace, SimConfig

grid = Grid1D(401)
mech = BranchingMechanism(atoms=((1.0, 0.2),), b=0.03)
p = NeumannProblem(alpha=0.5, mech=mech, g=(0.0, 0.0), grid=grid)
f = grid.function(lambda x: 1 + np.cos(np.pi * x))
t = 0.5

# two deterministic schemes for V_t f
cl = evolve_cl(p, f, t, n_steps=512)
it = evolve_iteration(p, f, t)
print("scheme gap (max norm): %.2e" % np.max(np.abs(cl.u.values - it.u.values)))
for x in (0.0, 0.25, 0.5, 0.75, 1.0):
    print("  V_t f(%.2f) = %.5f" % (x, float(cl.u(x))))

# the process started from δ_0.5; -ln E[exp(-<f, X_t>)] should equal V_t f(0.5)
mu0 = Measure.dirac(grid, 0.5)
for n_paths in (1000, 10000, 100000):
    t0 = time.perf_counter()
    res = mc_log_laplace(p, mu0, f, t, SimConfig(n_paths=n_paths, master_seed=1, dt_flow=1 / 64))
    print("n=%6d  MC %.5f ± %.5f   PDE %.5f   (%.1fs)"
          % (n_paths, res.estimate, res.std_error, float(cl.u(0.5)), time.perf_counter() - t0))

# flipping the sign of the decay term in the flow breaks the match
bad = mc_log_laplace(p, mu0, f, t, SimConfig(n_paths=10000, flip_decay_sign=True))
print("negative control: MC %.4f vs PDE %.4f" % (bad.estimate, float(cl.u(0.5))))
