"""
The boundary process on two points
==================================

With Γ = {0, 1} the Dirichlet-to-Neumann map is a 2x2 matrix and the
boundary evolution is an ODE. Three independent integrators of it are
compared, then the branching process on R²₊ is simulated exactly.
"""
import numpy as np

from neumann_superprocess import BoundaryState, BranchingMechanism, SimConfig
from neumann_superprocess.boundary import (
    dtn, dtn_discrete, evolve_W, evolve_W_duhamel, evolve_W_loglaplace, mc_boundary_duality,
)
from neumann_superprocess.mechanism import steklov_gamma, steklov_gamma_exact

alpha = 0.5
op = dtn(alpha)
print("N (closed form):\n", np.round(op.matrix, 5))
print("max |N - N_h| on 401 nodes: %.1e" % np.max(np.abs(op.matrix - dtn_discrete(alpha).matrix)))
print("Steklov constant %.6f (closed form %.6f)" % (steklov_gamma(alpha), steklov_gamma_exact(alpha)))

mech = BranchingMechanism(((1.0, 0.2),), 0.03)
f = [1.0, 1.0]
print("W_1 f by exponential formula:", evolve_W(op, mech, f, 1.0))
print("W_1 f by Duhamel:            ", evolve_W_duhamel(op, mech, f, 1.0))
print("W_1 f by log-Laplace form:   ", evolve_W_loglaplace(op, mech, f, 1.0))

res = mc_boundary_duality(op, mech, BoundaryState((1.0, 0.0)), f, 1.0,
                          SimConfig(n_paths=20000, master_seed=1))
print("Monte Carlo from m0 = (1, 0): %.5f ± %.5f" % (res.estimate, res.std_error))
