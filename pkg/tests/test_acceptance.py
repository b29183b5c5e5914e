"""Acceptance suite at full desk scale. Each test reports one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from neumann_superprocess import BranchingMechanism, Grid1D, Measure, NeumannProblem
from neumann_superprocess.boundary import (
    boundary_consistency,
    dtn,
    evolve_W_duhamel,
    generator_Lgamma,
    harmonic_extension,
)
from neumann_superprocess.measures import (
    ExpFunctional,
    exp_eval,
    generator_L,
    generator_L0,
    q_kernel,
    semiflow_kernel,
)
from neumann_superprocess.mechanism import steklov_gamma, steklov_gamma_exact
from neumann_superprocess.pde import evolve_cl, evolve_iteration
from neumann_superprocess.pdmp import SimConfig, default_workers, mc_log_laplace
from neumann_superprocess.properties import run_property_suite
from neumann_superprocess.verification import verify_boundary, verify_interior

from conftest import domain_function

N_PATHS = 100_000
MECH = BranchingMechanism(((1.0, 0.2),), 0.03)
GRID = Grid1D(401)
P = NeumannProblem(0.5, MECH, (0.0, 0.0), GRID)
F = GRID.function(lambda x: 1 + np.cos(np.pi * x))


def sim(seed=1, n=N_PATHS, **kw):
    return SimConfig(n_paths=n, master_seed=seed, dt_flow=1 / 64, t_end=kw.pop("t_end", 0.5),
                     n_workers=default_workers(), **kw)


class TestAcceptance:
    def test_1_interior_duality(self, report):
        t0 = time.perf_counter()
        rep = verify_interior(P, Measure.dirac(GRID, 0.5), F, 0.5, 512, sim(), 0.02, 0.005)
        ok = report(1, "interior duality", rep.passed,
                    f"MC {rep.estimate:.5f} ± {rep.std_error:.5f} vs PDE {rep.deterministic:.5f}, "
                    f"|Δ| {abs(rep.delta):.2e} <= {rep.allowance:.2e} ({time.perf_counter() - t0:.1f}s)")
        assert ok

    def test_2_boundary_duality(self, report):
        t0 = time.perf_counter()
        rep = verify_boundary(P, (1.0, 0.0), (1.0, 1.0), 1.0, 1024, sim(t_end=1.0), 0.02, 0.0)
        ok = report(2, "boundary duality", rep.passed,
                    f"MC {rep.estimate:.5f} ± {rep.std_error:.5f} vs W {rep.deterministic:.5f}, "
                    f"|Δ| {abs(rep.delta):.2e} <= {rep.allowance:.2e} ({time.perf_counter() - t0:.1f}s)")
        assert ok

    def test_3_linear_oracle(self, report):
        def linear(n):
            return NeumannProblem(0.0, BranchingMechanism(), (0.0, 0.0), Grid1D(n))

        p = linear(401)
        f = p.grid.function(lambda x: np.cos(np.pi * x))
        with pytest.warns(RuntimeWarning):
            v = evolve_cl(p, f, 0.1, 256).u.values
        exact = math.exp(-np.pi**2 * 0.05) * np.cos(np.pi * p.grid.x)
        rel = np.max(np.abs(v - exact)) / np.max(np.abs(exact))

        # spatial order against the time-discrete oracle (1 + λπ²/2)^{-N} cos(πx)
        def err(n, N=64, t=0.1):
            q = linear(n)
            g = q.grid.function(lambda x: 1 + np.cos(np.pi * x))
            w = evolve_cl(q, g, t, N).u.values
            return np.max(np.abs(w - 1 - (1 + t / N * np.pi**2 / 2) ** (-N) * np.cos(np.pi * q.grid.x)))

        order = math.log2(err(101) / err(201))
        ok = report(3, "linear oracle", rel <= 0.01 and order >= 1.9,
                    f"max relative error {rel:.2e} (<= 1e-2), spatial order {order:.3f} (>= 1.9)")
        assert ok

    def test_4_scheme_agreement(self, report):
        a = evolve_cl(P, F, 0.5, 512).u.values
        b = evolve_iteration(P, F, 0.5).u.values
        gap = float(np.max(np.abs(a - b)))
        ok = report(4, "scheme agreement", gap <= 2e-3, f"max gap {gap:.2e} (<= 2e-3)")
        assert ok

    def test_5_steklov_and_dtn(self, report):
        gam = steklov_gamma(0.5, 2000)
        exact = steklov_gamma_exact(0.5)
        ref = np.array([[1.31304, -0.85092], [-0.85092, 1.31304]])
        dtn_err = float(np.max(np.abs(dtn(0.5).matrix - ref)))
        ok = abs(gam - exact) <= 1e-4 and abs(gam - 0.231059) <= 1e-4 and dtn_err <= 1e-3
        report(5, "Steklov constant and DtN", ok,
               f"gamma {gam:.6f} vs closed form {exact:.6f}, DtN max error {dtn_err:.1e}")
        assert ok

    def test_6_property_batteries(self, report):
        t0 = time.perf_counter()
        results = run_property_suite(500, seed=0)
        bad = {k: v.violations for k, v in results.items() if not v.passed}
        trials = min(v.trials for v in results.values())
        ok = report(6, "property batteries", not bad and trials >= 500,
                    f"{len(results)} batteries x {trials} trials, violations {bad or 0} "
                    f"({time.perf_counter() - t0:.1f}s)")
        assert ok

    def test_7_generator_checks(self, report):
        tau = 1e-3
        errs = {}
        fixtures = [
            (0.5, MECH, (0.0, 0.0), 1.0, lambda x: 1 + 0.5 * np.sin(3 * x) + x**2),
            (0.5, MECH, (0.3, 0.1), 0.5, lambda x: 2 - x),
            (1.5, BranchingMechanism(((0.5, 0.4), (2.0, 0.1)), 0.1), (0.2, 0.0), 2.0,
             lambda x: 0.5 + np.cos(2 * x) ** 2),
        ]
        for i, (alpha, mech, g, c0, dens) in enumerate(fixtures):
            p = NeumannProblem(alpha, mech, g, GRID)
            Fe, mu = ExpFunctional(domain_function(p, c0)), Measure.from_density(dens, GRID)
            fd = (q_kernel(p, Fe, mu, tau, 32) - exp_eval(Fe, mu)) / tau
            errs[f"L{i}"] = abs(generator_L(p, Fe, mu) / fd - 1)

        f0 = GRID.function(lambda x: 1 + 0.5 * np.cos(np.pi * x) + 0.2 * np.cos(2 * np.pi * x))
        for i, dens in enumerate([lambda x: 1 + x, lambda x: np.exp(-x), lambda x: 2 + np.sin(5 * x)]):
            mu = Measure.from_density(dens, GRID)
            fd = (semiflow_kernel(0.5, f0, mu, tau) - exp_eval(ExpFunctional(f0), mu)) / tau
            errs[f"L0_{i}"] = abs(generator_L0(0.5, ExpFunctional(f0), mu) / fd - 1)

        for i, (alpha, mech, f, m) in enumerate([
                (0.5, MECH, [1.0, 1.0], [1.0, 0.0]),
                (0.5, BranchingMechanism(((1.0, 2.0),), 0.03), [0.5, 1.0], [0.7, 1.2]),
                (2.0, BranchingMechanism(((0.5, 0.4), (2.0, 0.1)), 0.1), [2.0, 0.3], [2.0, 0.5])]):
            op, m = dtn(alpha), np.array(m)
            fd = (math.exp(-float(m @ evolve_W_duhamel(op, mech, f, tau, 1e-5)))
                  - math.exp(-float(m @ f))) / tau
            errs[f"LG{i}"] = abs(generator_Lgamma(op, mech, f, m) / fd - 1)

        bump = Measure.from_density(lambda x: np.where(np.abs(x - 0.5) < 0.2,
                                                       np.cos(np.pi * (x - 0.5) / 0.4) ** 4, 0.0), GRID)
        Fr = ExpFunctional(GRID.function(lambda x: 1 + x**2 + 0.3 * np.sin(4 * x)))
        reduction = abs(generator_L(P, Fr, bump) - generator_L0(0.5, Fr, bump))
        mu = Measure.from_density(lambda x: 1 + 0.5 * np.sin(3 * x) + x**2, GRID)
        consistency = boundary_consistency(P, harmonic_extension(dtn(0.5), [1.0, 0.6], GRID), mu)

        worst = max(errs.values())
        ok = worst <= 0.02 and reduction <= 1e-3 and consistency <= 1e-2
        report(7, "generator checks", ok,
               f"worst relative FD error {worst:.2e} over {len(errs)} fixtures (<= 2e-2), "
               f"|L - L0| {reduction:.1e} (<= 1e-3), boundary consistency {consistency:.1e} (<= 1e-2)")
        assert ok

    def test_8_branching_factorization(self, report):
        strong = NeumannProblem(0.5, BranchingMechanism(((2.0, 0.1),), 0.03), (0.5, 1.0), GRID)
        pairs = [
            (P, Measure.dirac(GRID, 0.5), Measure.dirac(GRID, 0.2)),
            (strong, Measure.from_density(lambda x: 1 + x, GRID), Measure.dirac(GRID, 0.0, 2.0)),
        ]
        details, ok = [], True
        for k, (p, mu, nu) in enumerate(pairs):
            r_mu = mc_log_laplace(p, mu, F, 0.5, sim(10 + 3 * k))
            r_nu = mc_log_laplace(p, nu, F, 0.5, sim(11 + 3 * k))
            r_sum = mc_log_laplace(p, mu + nu, F, 0.5, sim(12 + 3 * k))
            gap = r_sum.estimate - r_mu.estimate - r_nu.estimate
            se = math.sqrt(r_mu.std_error**2 + r_nu.std_error**2 + r_sum.std_error**2)
            ok &= abs(gap) <= 3 * se
            details.append(f"pair {k + 1}: gap {gap:+.2e} vs 3SE {3 * se:.2e}")
        report(8, "branching factorization", ok, "; ".join(details))
        assert ok

    def test_9_conservativeness(self, report):
        mu = Measure.dirac(GRID, 0.1)
        cons = mc_log_laplace(P, mu, F, 0.5, sim(21))
        zero = mc_log_laplace(P, mu, GRID.function(0.0), 0.5, sim(22, n=10_000))
        killed = mc_log_laplace(P.with_g((0.5, 0.5)), mu, F, 0.5, sim(23, n=10_000))
        frac = killed.n_dead / killed.n_paths
        ok = cons.n_dead == 0 and zero.estimate == 0.0 and frac > 0
        report(9, "conservativeness switch", ok,
               f"g=0: {cons.n_dead} deaths in {cons.n_paths} paths; f=0 estimate {zero.estimate!r}; "
               f"g=(0.5,0.5): death fraction {frac:.4f}")
        assert ok
