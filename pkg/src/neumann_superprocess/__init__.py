"""Nonlinear Neumann parabolic problem, its measure-valued branching process
and the boundary superprocess, with numerical checks of their dualities."""

__version__ = "0.1.0"

from .grid1d import Grid1D, GridFunction, RobinHeatSemigroup, inner, boundary_inner, green_residual
from .mechanism import (
    AdmissibilityReport,
    BranchingMechanism,
    check_admissible,
    eval_beta,
    gram_nd_test,
    gram_pd_test,
    steklov_gamma,
    steklov_gamma_exact,
    truncated_stable,
)
from .pde import (
    EvolutionResult,
    InadmissibleMechanism,
    NeumannProblem,
    SolverError,
    apply_A,
    energy_phi,
    evolve_cl,
    evolve_iteration,
    evolve_linear,
    resolvent,
    weight_function,
    weighted_norm,
)
from .measures import (
    ExpFunctional,
    Measure,
    exp_eval,
    generator_L,
    generator_L0,
    q_kernel,
    semiflow_kernel,
    var_derivative,
)
from .pdmp import PdmpState, SimConfig, SimResult, flow_step, jump_rates, mc_log_laplace, simulate_path, step_event
from .boundary import (
    BoundaryState,
    DtNOperator,
    boundary_resolvent,
    boundary_consistency,
    dtn,
    evolve_W,
    evolve_W_duhamel,
    generator_Lgamma,
    harmonic_extension,
    mc_boundary_duality,
    superprocess_simulate,
)
