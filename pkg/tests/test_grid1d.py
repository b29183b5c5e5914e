import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neumann_superprocess.grid1d import (
    Grid1D,
    GridFunction,
    RobinHeatSemigroup,
    boundary_inner,
    green_residual,
    inner,
    laplace_half,
    normal_derivative,
)


class TestGrid:
    @given(st.integers(3, 5000))
    def test_spacing(self, n):
        g = Grid1D(n)
        assert abs(g.h * (n - 1) - 1.0) < 1e-12
        assert g.x[0] == 0.0 and g.x[-1] == 1.0
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            Grid1D(2)

    def test_nonfinite_values_rejected(self):
        with pytest.raises(ValueError):
            GridFunction(np.array([0.0, np.nan, 1.0]), Grid1D(3))


class TestOperators:
    def test_constants_are_harmonic(self):
        g = Grid1D(21)
        assert np.all(laplace_half(g.function(3.0)).values == 0)

    def test_quadratic_interior(self):
        g = Grid1D(21)
        v = laplace_half(g.function(lambda x: x**2)).values
        np.testing.assert_allclose(v[1:-1], 1.0, rtol=1e-9)

    def test_cosine(self):
        g = Grid1D(401)
        v = laplace_half(g.function(lambda x: np.cos(np.pi * x))).values
        np.testing.assert_allclose(v, -0.5 * np.pi**2 * np.cos(np.pi * g.x), atol=1e-3)

    def test_normal_derivative_examples(self):
        g = Grid1D(11)
        assert normal_derivative(g.function(lambda x: x)) == pytest.approx((-1.0, 1.0))
        assert normal_derivative(g.function(2.0)) == pytest.approx((0.0, 0.0))

    def test_normal_derivative_second_order(self):
        f = lambda x: np.cosh(x - 0.5) + x**3
        exact = np.array([-(np.sinh(-0.5)), np.sinh(0.5) + 3.0])
        errs = [np.max(np.abs(np.array(normal_derivative(Grid1D(n).function(f))) - exact))
                for n in (101, 201)]
        assert math.log2(errs[0] / errs[1]) > 1.9


class TestInnerProducts:
    def test_examples(self):
        g = Grid1D(51)
        one = g.function(1.0)
        assert inner(one, one) == pytest.approx(1.0)
        assert boundary_inner(one, one) == 2.0
        assert inner(g.function(lambda x: x), one) == pytest.approx(0.5, abs=1e-14)
        c = Grid1D(801).function(lambda x: np.cos(np.pi * x))
        assert inner(c, c) == pytest.approx(0.5, abs=1e-5)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
    def test_exact_for_piecewise_linear_product(self, a, b, c, d):
        # for a product of linears the trapezoid rule overshoots by exactly (h²/6)·b·d
        g = Grid1D(11)
        val = inner(g.function(lambda x: a + b * x), g.function(lambda x: c + d * x))
        exact = a * c + (a * d + b * c) / 2 + b * d / 3
        assert val == pytest.approx(exact + b * d * g.h**2 / 6, abs=1e-12)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            inner(Grid1D(5).function(1.0), Grid1D(6).function(1.0))


class TestGreen:
    def test_antisymmetry(self):
        g = Grid1D(31)
        u = g.function(lambda x: np.exp(x))
        assert green_residual(u, u) == 0.0

    def test_sine_square(self):
        g = Grid1D(401)
        assert green_residual(g.function(lambda x: np.sin(np.pi * x)), g.function(lambda x: x**2)) <= 1e-3

    def test_order(self):
        res = [green_residual(Grid1D(n).function(lambda x: np.sin(np.pi * x)),
                              Grid1D(n).function(lambda x: np.exp(x))) for n in (101, 201)]
        assert math.log2(res[0] / res[1]) > 1.9

    def test_divergence_case(self):
        res = [green_residual(Grid1D(n).function(1.0), Grid1D(n).function(lambda x: np.cos(2 * x)))
               for n in (101, 201)]
        assert res[1] < res[0] / 3.5


class TestCsv:
    @given(vals=st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=30))
    def test_round_trip(self, vals, tmp_path_factory):
        g = Grid1D(len(vals))
        f = GridFunction(np.array(vals), g)
        path = tmp_path_factory.mktemp("csv") / "f.csv"
        f.to_csv(path)
        back = GridFunction.from_csv(path)
        assert np.array_equal(back.values, f.values)
        assert path.read_text().splitlines()[0] == "x,value"


class TestRobinSemigroup:
    def test_neumann_conserves_mass(self):
        g = Grid1D(101)
        sg = RobinHeatSemigroup(g, 0.0)
        rho = np.exp(-50 * (g.x - 0.3) ** 2)
        out = sg.propagate(rho, 0.05)
        assert g.weights @ out == pytest.approx(g.weights @ rho, rel=1e-10)

    def test_cosine_mode(self):
        g = Grid1D(401)
        sg = RobinHeatSemigroup(g, 0.0)
        out = sg.propagate(np.cos(np.pi * g.x), 0.1)
        np.testing.assert_allclose(out, math.exp(-np.pi**2 * 0.05) * np.cos(np.pi * g.x), atol=1e-5)

    def test_positivity_from_point_mass(self):
        g = Grid1D(401)
        sg = RobinHeatSemigroup(g, 0.5, kappa=0.015)
        rho = np.zeros(g.n)
        rho[0] = 1 / g.weights[0]
        for t in (1e-6, 1e-4, 1e-2):
            assert sg.propagate(rho, t).min() > -1e-12

    def test_robin_mass_balance(self):
        # d/dt mass = -α mass + ½Σ∂_νρ = -α mass + κ(ρ(0) + ρ(1))
        g = Grid1D(801)
        sg = RobinHeatSemigroup(g, 0.3, kappa=0.2)
        rho = 1 + 0.5 * np.cos(np.pi * g.x)
        dt = 1e-6
        rate = (g.weights @ sg.propagate(rho, dt) - g.weights @ rho) / dt
        expected = -0.3 * (g.weights @ rho) + 0.2 * (rho[0] + rho[-1])
        assert rate == pytest.approx(expected, rel=1e-3)
