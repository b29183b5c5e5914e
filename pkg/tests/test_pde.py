import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_superprocess import BranchingMechanism, Grid1D, GridFunction, NeumannProblem
from neumann_superprocess.pde import (
    InadmissibleMechanism,
    SolverError,
    apply_A,
    dalembert_residual,
    energy_phi,
    evolve_cl,
    evolve_iteration,
    evolve_linear,
    resolvent,
    weight_function,
    weighted_norm,
)


def linear_problem(n=401, alpha=0.0):
    return NeumannProblem(alpha, BranchingMechanism(), (0.0, 0.0), Grid1D(n))


class TestProblem:
    def test_inadmissible_rejected(self, grid401):
        with pytest.raises(InadmissibleMechanism):
            NeumannProblem(0.5, BranchingMechanism(((1.0, 0.25),)), (0, 0), grid401)

    def test_unsafe_override(self, grid401):
        p = NeumannProblem(0.5, BranchingMechanism(((1.0, 0.25),)), (0, 0), grid401, unsafe=True)
        assert p.alpha == 0.5

    def test_negative_g_rejected(self, headline_mech, grid401):
        with pytest.raises(ValueError):
            NeumannProblem(0.5, headline_mech, (-0.1, 0.0), grid401)


class TestApplyA:
    def test_zero(self, headline):
        r = apply_A(headline, headline.grid.function(0.0))
        assert np.all(r.interior.values == 0) and r.boundary == (0.0, 0.0)

    def test_constant_linear(self):
        p = linear_problem(51, alpha=0.7)
        r = apply_A(p, p.grid.function(2.0))
        np.testing.assert_allclose(r.interior.values, 1.4)
        assert r.boundary == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_alpha_harmonic(self, headline):
        k = 1.0
        u = headline.grid.function(lambda x: np.cosh(k * (x - 0.5)))
        r = apply_A(headline, u)
        assert np.max(np.abs(r.interior.values)) < 1e-5
        expected = k * math.sinh(k / 2) + float(headline.mech.beta(math.cosh(k / 2)))
        assert r.boundary == pytest.approx((expected, expected), abs=1e-5)


class TestResolvent:
    def test_fixed_point_zero(self, headline):
        u = resolvent(headline, headline.grid.function(0.0), 0.3)
        assert np.all(u.values == 0)

    def test_linear_eigenfunction(self):
        p = linear_problem(401, alpha=0.5)
        lam = 0.2
        f = p.grid.function(lambda x: np.cos(np.pi * x))
        u = resolvent(p, f, lam)
        np.testing.assert_allclose(u.values, f.values / (1 + lam * (np.pi**2 / 2 + 0.5)), atol=1e-4)

    @settings(max_examples=40)
    @given(st.integers(0, 10**6), st.floats(0.01, 2.0))
    def test_contraction(self, seed, lam):
        rng = np.random.default_rng(seed)
        p = NeumannProblem(0.5, BranchingMechanism(((1.0, 0.2),), 0.03), (0.1, 0.4), Grid1D(41))
        f = p.grid.function(rng.uniform(0, 3, 41))
        fb = p.grid.function(rng.uniform(0, 3, 41))
        w = p.grid.weights
        d0 = np.sqrt(w @ (f.values - fb.values) ** 2)
        d1 = np.sqrt(w @ (resolvent(p, f, lam).values - resolvent(p, fb, lam).values) ** 2)
        assert d1 <= d0 * (1 + 1e-10)

    def test_solves_discrete_equation(self, headline):
        f = headline.grid.function(lambda x: 1 + np.cos(np.pi * x))
        u = resolvent(headline, f, 0.5)
        # boundary condition holds up to the O(h) one-sided ghost row
        r = apply_A(headline, u)
        assert max(abs(v) for v in r.boundary) < 5e-2
        assert np.all(u.values > 0)

    def test_rejects_nonpositive_lambda(self, headline):
        with pytest.raises(ValueError):
            resolvent(headline, headline.grid.function(1.0), 0.0)


class TestEvolveCl:
    def test_time_zero(self, headline):
        f = headline.grid.function(lambda x: 1 + x)
        assert evolve_cl(headline, f, 0.0).u is f

    def test_linear_oracle(self):
        p = linear_problem()
        f = p.grid.function(lambda x: np.cos(np.pi * x))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = evolve_cl(p, f, 0.1, 256)
        exact = math.exp(-np.pi**2 * 0.05) * np.cos(np.pi * p.grid.x)
        assert np.max(np.abs(res.u.values - exact)) / np.max(np.abs(exact)) <= 0.01
        assert "negative_input" in res.flags

    def test_negative_input_warns(self):
        p = linear_problem(21)
        with pytest.warns(RuntimeWarning):
            evolve_cl(p, p.grid.function(lambda x: x - 0.5), 0.1, 4)

    def test_constant_decays(self):
        p = linear_problem(51, alpha=0.8)
        res = evolve_cl(p, p.grid.function(1.5), 0.5, 512)
        np.testing.assert_allclose(res.u.values, 1.5 * math.exp(-0.4), rtol=1e-3)

    def test_first_order_in_time(self, headline):
        p = headline.with_grid(Grid1D(101))
        f = p.grid.function(lambda x: 1 + np.cos(np.pi * x))
        ref = evolve_cl(p, f, 0.5, 4096).u.values
        e1 = np.max(np.abs(evolve_cl(p, f, 0.5, 32).u.values - ref))
        e2 = np.max(np.abs(evolve_cl(p, f, 0.5, 64).u.values - ref))
        assert 0.8 < math.log2(e1 / e2) < 1.3

    def test_spatial_order_against_time_discrete_oracle(self):
        def err(n):
            p = linear_problem(n)
            N, t = 64, 0.1
            f = p.grid.function(lambda x: 1 + np.cos(np.pi * x))
            v = evolve_cl(p, f, t, N).u.values
            return np.max(np.abs(v - 1 - (1 + t / N * np.pi**2 / 2) ** (-N) * np.cos(np.pi * p.grid.x)))

        assert math.log2(err(101) / err(201)) >= 1.9

    def test_agrees_with_exact_linear_flow(self):
        p = linear_problem(201, alpha=0.3)
        f = p.grid.function(lambda x: 1 + x**2)
        a = evolve_cl(p, f, 0.2, 2048).u.values
        b = evolve_linear(p, f, 0.2).u.values
        assert np.max(np.abs(a - b)) < 1e-4


class TestIteration:
    def test_matches_cl_on_headline(self, headline):
        f = headline.grid.function(lambda x: 1 + np.cos(np.pi * x))
        a = evolve_cl(headline, f, 0.5, 512).u.values
        b = evolve_iteration(headline, f, 0.5).u.values
        assert np.max(np.abs(a - b)) <= 2e-3

    def test_with_inflow(self, headline):
        p = headline.with_g((0.3, 0.1)).with_grid(Grid1D(201))
        f = p.grid.function(lambda x: 2 - x)
        a = evolve_cl(p, f, 0.3, 1024).u.values
        b = evolve_iteration(p, f, 0.3).u.values
        assert np.max(np.abs(a - b)) <= 2e-3

    def test_too_few_iterations(self, headline):
        f = headline.grid.function(lambda x: 1 + np.cos(np.pi * x))
        with pytest.raises(SolverError):
            evolve_iteration(headline, f, 0.5, max_iter=1)

    def test_dalembert_identity(self, headline):
        f = headline.grid.function(lambda x: 1 + np.cos(np.pi * x))
        res = evolve_iteration(headline, f, 0.5)
        psi = headline.grid.function(lambda x: np.exp(-x))
        assert dalembert_residual(headline, res, f, psi) < 1e-4

    def test_files(self, headline, tmp_path):
        f = headline.grid.function(lambda x: 1 + x)
        res = evolve_iteration(headline, f, 0.25)
        res.to_files(tmp_path / "v.csv")
        side = json.loads((tmp_path / "v.json").read_text())
        assert side["scheme"] == "iteration" and side["t"] == 0.25
        back = GridFunction.from_csv(tmp_path / "v.csv")
        assert np.array_equal(back.values, res.u.values)


class TestEnergy:
    def test_nonincreasing_on_headline(self, headline):
        u = headline.grid.function(lambda x: 2 + np.cos(3 * x))
        p = headline.with_g((0.2, 0.5))
        e = [energy_phi(p, u)]
        for _ in range(20):
            u = resolvent(p, u, 0.05)
            e.append(energy_phi(p, u))
        assert np.all(np.diff(e) <= 1e-12)

    def test_gradient_matches_operator(self, headline):
        # dΦ(u)[v] = <A u, v>_W for the semi-discrete operator
        p = headline.with_g((0.2, 0.5)).with_grid(Grid1D(41))
        rng = np.random.default_rng(3)
        u = p.grid.function(rng.uniform(0.5, 2, 41))
        v = rng.normal(size=41)
        eps = 1e-6
        fd = (energy_phi(p, u + eps * v) - energy_phi(p, u - eps * v)) / (2 * eps)
        lam = 1e-8
        au = (u.values - resolvent(p, u, lam).values) / lam
        assert fd == pytest.approx(float(p.grid.weights @ (au * v)), rel=1e-4)


class TestWeight:
    def test_trivial_weight(self):
        assert np.all(weight_function(Grid1D(11), 0.5, 0.0).values == 1)

    def test_headline_weight(self):
        w = weight_function(Grid1D(101), 0.5, 0.23)
        assert w.values.min() >= 1.0
        u = Grid1D(101).function(lambda x: x)
        assert weighted_norm(u, 0.5, 0.23) == pytest.approx(w.values[-1])

    def test_infeasible(self):
        with pytest.raises(SolverError, match="node"):
            weight_function(Grid1D(101), 0.01, 5.0)
