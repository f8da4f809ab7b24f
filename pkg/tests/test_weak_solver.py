import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance, random_measure
from weakot.classical_ot import random_coupling
from weakot.costs import euclidean, power, quadratic
from weakot.errors import ConvergenceFailure, DimensionMismatch, InputError, InstanceTooLarge
from weakot.measures import Coupling, DiscreteMeasure, conditional_restrict
from weakot.weak_solver import (brute_force, brute_force_refined, evaluate, simplex_grid, solve,
                                solve_restarts)


def _run(mu, nu, method, max_iter):
    try:
        return solve(mu, nu, quadratic(), tol=1e-10, method=method, max_iter=max_iter)
    except ConvergenceFailure as exc:
        return exc.result


class TestSolveExamples:
    def test_counterexample(self, counterexample):
        sol = solve(*counterexample, quadratic())
        assert sol.converged and sol.value <= 1e-8
        np.testing.assert_allclose(sol.barycenters[:, 0], [-1.0, 1.0], atol=1e-6)

    def test_restricted_marginals(self):
        mu, nu = DiscreteMeasure([-1.0, 1.0]), DiscreteMeasure([-2.0, 2.0])
        sol = solve(mu, nu, quadratic())
        assert sol.value <= 1e-8
        hat = Coupling(mu, nu, [[3 / 8, 1 / 8], [1 / 8, 3 / 8]])
        assert evaluate(hat, quadratic()) == pytest.approx(0.0, abs=1e-15)

    def test_single_target(self):
        sol = solve(DiscreteMeasure([0.0]), DiscreteMeasure([5.0]), quadratic())
        assert sol.value == 25.0

    def test_other_costs(self, counterexample):
        for C in (euclidean(), power(1.5), power(3.0)):
            assert solve(*counterexample, C).value <= 1e-6

    def test_input_checks(self, counterexample):
        with pytest.raises(DimensionMismatch):
            solve(DiscreteMeasure([0.0]), DiscreteMeasure([[0.0, 0.0]]), quadratic())
        with pytest.raises(InputError):
            solve(*counterexample, quadratic(), tol=0.0)
        with pytest.raises(InputError):
            solve(*counterexample, euclidean(), method="away")
        with pytest.raises(InputError):
            solve(*counterexample, quadratic(), method="newton")

    def test_convergence_failure_carries_result(self):
        rng = np.random.default_rng(4)
        mu, nu = random_measure(rng, 6, 2), random_measure(rng, 6, 2)
        with pytest.raises(ConvergenceFailure) as info:
            solve(mu, nu, quadratic(), tol=1e-14, max_iter=1, method="fw")
        res = info.value.result
        assert res is not None and not res.converged and res.iterations == 1

    def test_methods_agree(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            mu, nu = random_instance(rng, 6, 6)
            exact = solve(mu, nu, quadratic(), tol=1e-10)
            for method in ("fw", "away"):
                res = _run(mu, nu, method, max_iter=2000)
                # every method's certificate brackets the same optimum
                assert res.lower_bound - 1e-12 <= exact.value <= res.value + 1e-12

    def test_warm_start(self, counterexample):
        mu, nu = counterexample
        init = Coupling.product(mu, nu)
        assert solve(mu, nu, quadratic(), init=init).value <= 1e-8


class TestEvaluate:
    def test_restricted_coupling_costs_one(self):
        mu, nu = DiscreteMeasure([-1.0, 1.0]), DiscreteMeasure([-2.0, 2.0])
        tilde = Coupling(mu, nu, [[0.5, 0.0], [0.0, 0.5]])
        assert evaluate(tilde, quadratic()) == 1.0

    def test_product(self):
        rng = np.random.default_rng(6)
        mu, nu = random_measure(rng, 4, 2), random_measure(rng, 5, 2)
        expected = mu.weights @ np.sum((mu.points - nu.mean()) ** 2, axis=1)
        assert evaluate(Coupling.product(mu, nu), quadratic()) == pytest.approx(expected, rel=1e-12)

    def test_fixed_barycenters_cost_zero(self, counterexample_optimal):
        assert evaluate(counterexample_optimal, quadratic()) == 0.0


class TestCertificate:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_bracket_and_descent(self, seed):
        rng = np.random.default_rng(seed)
        mu, nu = random_instance(rng)
        sol = solve(mu, nu, quadratic(), tol=1e-9)
        assert sol.fw_gap >= -1e-10 and sol.fw_gap <= 1e-9
        assert sol.value >= sol.lower_bound
        # any feasible coupling costs at least the lower bound
        other = evaluate(random_coupling(mu, nu, rng), quadratic())
        assert other >= sol.lower_bound - 1e-12

    def test_history_nonincreasing_for_line_search(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            mu, nu = random_instance(rng)
            vals = [v for v, _ in _run(mu, nu, "fw", max_iter=500).history]
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.2, 5.0))
    def test_translation_and_scaling(self, seed, s):
        rng = np.random.default_rng(seed)
        mu, nu = random_instance(rng, 5, 5, dims=(2,))
        c = rng.normal(size=2)
        base = solve(mu, nu, quadratic(), tol=1e-11).value
        moved = solve(mu.translate(c), nu.translate(c), quadratic(), tol=1e-11).value
        scaled = solve(mu.scale(s), nu.scale(s), quadratic(), tol=1e-11 * s * s).value
        assert abs(moved - base) <= 1e-9
        assert scaled == pytest.approx(s * s * base, rel=1e-9, abs=1e-9 * s * s)

    def test_restriction_property(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            mu, nu = random_instance(rng, 5, 5)
            sol = solve(mu, nu, quadratic(), tol=1e-10)
            q = rng.integers(1, 4, size=mu.n).astype(float)
            hat_mu = DiscreteMeasure(mu.points, q / q.sum())
            hat = conditional_restrict(sol.coupling, hat_mu)
            best = solve(hat.mu, hat.nu, quadratic(), tol=1e-10).value
            assert evaluate(hat, quadratic()) <= best + 1e-8

    def test_restarts_agree_on_map(self):
        rng = np.random.default_rng(9)
        mu, nu = random_instance(rng, 5, 6)
        sols, dev = solve_restarts(mu, nu, quadratic(), restarts=5, tol=1e-11)
        assert len(sols) == 5 and dev <= 1e-5


class TestBruteForce:
    def test_grid(self):
        g = simplex_grid(3, 4)
        assert g.shape == (15, 3) and np.allclose(g.sum(axis=1), 1.0)

    def test_one_row(self):
        nu = DiscreteMeasure([-1.0, 3.0], [0.25, 0.75])
        val, pi = brute_force(DiscreteMeasure([0.5]), nu, quadratic(), 8)
        assert val == quadratic().eval([0.5], nu.points, nu.weights)

    def test_counterexample_decreasing(self, counterexample):
        v16, _ = brute_force(*counterexample, quadratic(), 16)
        v32, _ = brute_force(*counterexample, quadratic(), 32)
        assert v16 <= 1e-3 and v32 <= v16

    def test_spread_instance(self):
        val, _ = brute_force(DiscreteMeasure([-3.0, 3.0]), DiscreteMeasure([-1.0, 1.0]), quadratic(), 64)
        assert val == pytest.approx(4.0, abs=1e-12)

    def test_guards(self, counterexample):
        with pytest.raises(InstanceTooLarge):
            brute_force(DiscreteMeasure([0.0, 1.0, 2.0, 3.0]), DiscreteMeasure([0.0, 1.0, 2.0]), quadratic())
        with pytest.raises(InputError):
            brute_force(*counterexample, quadratic(), 4)

    def test_refined(self, counterexample):
        fine, err, pi = brute_force_refined(*counterexample, quadratic(), 8)
        assert err >= 0.0 and fine >= 0.0
