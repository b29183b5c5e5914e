import numpy as np
import pytest

from neumann_superprocess import Grid1D
from neumann_superprocess.mechanism import steklov_gamma
from neumann_superprocess.properties import BATTERIES, random_input, random_problem, run_property_suite


class TestGenerators:
    def test_random_problems_admissible(self):
        rng = np.random.default_rng(0)
        g = Grid1D(21)
        for _ in range(100):
            p = random_problem(rng, g)
            assert p.mech.first_moment + p.mech.b <= steklov_gamma(p.alpha)

    def test_random_inputs_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            assert random_input(rng, Grid1D(21)).values.min() >= 0.0


class TestBatteries:
    @pytest.mark.parametrize("name", sorted(BATTERIES))
    def test_small_run_passes(self, name):
        res = BATTERIES[name](n_trials=15)
        assert res.trials == 15 and res.passed, res.to_dict()

    def test_suite_deterministic(self):
        a = run_property_suite(4, seed=3)
        b = run_property_suite(4, seed=3)
        assert {k: v.worst for k, v in a.items()} == {k: v.worst for k, v in b.items()}
