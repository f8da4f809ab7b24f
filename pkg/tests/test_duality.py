import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from weakot.classical_ot import random_coupling
from weakot.costs import effective_lipschitz_bound, euclidean, quadratic
from weakot.duality import (DualPotential, dual_from_primal, dual_value, duality_gap, evaluate_rc,
                            lipschitz_tighten, maximize_dual)
from weakot.errors import ConvergenceFailure, InputError
from weakot.measures import DiscreteMeasure
from weakot.weak_solver import evaluate, solve


class TestEvaluateRc:
    def test_zero_potential_inside_hull(self):
        val, p = evaluate_rc(quadratic(), [0.0, 0.0, 0.0], [0.3], [[-2.0], [0.0], [2.0]])
        assert val == pytest.approx(0.0, abs=1e-10)
        assert p @ np.array([-2.0, 0.0, 2.0]) == pytest.approx(0.3, abs=1e-5)

    def test_constant_shift(self):
        ys = [[-1.0], [0.5], [2.0]]
        base, _ = evaluate_rc(quadratic(), [0.0, 0.0, 0.0], [3.0], ys)
        shifted, _ = evaluate_rc(quadratic(), [1.5, 1.5, 1.5], [3.0], ys)
        assert shifted == pytest.approx(base + 1.5, abs=1e-10)

    def test_two_point_example(self):
        val, p = evaluate_rc(quadratic(), [0.0, 2.0], [0.0], [[-1.0], [1.0]])
        # independent oracle: grid search over p = (a, 1 - a)
        a = np.linspace(0.0, 1.0, 200001)
        grid = 2.0 * (1 - a) + (1 - 2 * a) ** 2
        assert val == pytest.approx(grid.min(), abs=1e-9)
        assert val == pytest.approx(0.75, abs=1e-12)
        np.testing.assert_allclose(p, [0.75, 0.25], atol=1e-9)

    def test_input_checks(self):
        with pytest.raises(InputError):
            evaluate_rc(quadratic(), [0.0], [0.0], [[1.0], [2.0]])
        with pytest.raises(InputError):
            evaluate_rc(quadratic(), [0.0, 0.0], [0.0, 1.0], [[1.0], [2.0]])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 3), st.booleans())
    def test_first_order_condition(self, seed, m, d, euclid):
        rng = np.random.default_rng(seed)
        C = euclidean() if euclid else quadratic()
        ys, x, psi = rng.normal(size=(m, d)), rng.normal(size=d), rng.normal(size=m)
        val, p = evaluate_rc(C, psi, x, ys)
        if euclid and np.linalg.norm(x - p @ ys) < 1e-6:
            return  # subgradient of |.| at 0 is a ball; the check below is for smooth points
        h = psi + C.grad_weights(x, ys, p)
        lam = h.min()
        assert np.all(h >= lam - 1e-6)
        assert np.all(h[p > 1e-9] <= lam + 1e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 2))
    def test_no_random_kernel_beats_minimum(self, seed, m, d):
        rng = np.random.default_rng(seed)
        ys, x, psi = rng.normal(size=(m, d)), rng.normal(size=d), rng.normal(size=m)
        val, _ = evaluate_rc(quadratic(), psi, x, ys)
        for q in rng.dirichlet(np.ones(m), size=200):
            assert val <= psi @ q + quadratic().eval(x, ys, q) + 1e-12


class TestDualValue:
    def test_counterexample_zero_potential(self, counterexample):
        mu, nu = counterexample
        assert dual_value(mu, nu, quadratic(), np.zeros(3)) == pytest.approx(0.0, abs=1e-10)
        assert dual_value(mu, nu, quadratic(), np.full(3, 2.5)) == pytest.approx(0.0, abs=1e-10)

    def test_single_point(self):
        assert dual_value(DiscreteMeasure([0.0]), DiscreteMeasure([5.0]), quadratic(), [0.0]) == 25.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_weak_duality_shift_and_concavity(self, seed):
        rng = np.random.default_rng(seed)
        mu, nu = random_instance(rng)
        C = quadratic()
        primal = solve(mu, nu, C, tol=1e-9).value
        other = evaluate(random_coupling(mu, nu, rng), C)
        psi1, psi2 = rng.normal(size=(2, nu.n)) * 3
        d1, d2 = dual_value(mu, nu, C, psi1), dual_value(mu, nu, C, psi2)
        assert d1 <= primal + 1e-9 and d1 <= other + 1e-9
        assert dual_value(mu, nu, C, psi1 + 0.7) == pytest.approx(d1, abs=1e-10)
        assert dual_value(mu, nu, C, (psi1 + psi2) / 2) >= (d1 + d2) / 2 - 1e-9


class TestMaximizeDual:
    def test_counterexample(self, counterexample):
        res = maximize_dual(*counterexample, quadratic(), tol=1e-4)
        assert res.gap <= 1e-4 and res.value <= 1e-9

    def test_single_point(self):
        res = maximize_dual(DiscreteMeasure([0.0]), DiscreteMeasure([5.0]), quadratic(), tol=1e-6)
        assert res.value == pytest.approx(25.0, abs=1e-6)

    def test_spread_instance(self):
        res = maximize_dual(DiscreteMeasure([-3.0, 3.0]), DiscreteMeasure([-1.0, 1.0]), quadratic(), tol=1e-3)
        assert res.value == pytest.approx(4.0, abs=1e-3)

    def test_from_zero_start(self):
        mu, nu = DiscreteMeasure([-3.0, 3.0]), DiscreteMeasure([-1.0, 1.0])
        res = maximize_dual(mu, nu, quadratic(), tol=1e-3, init="zero", max_iter=20000)
        assert res.gap <= 1e-3

    def test_primal_warm_start_certificate(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            mu, nu = random_instance(rng)
            sol = solve(mu, nu, quadratic(), tol=1e-9)
            d = dual_value(mu, nu, quadratic(), dual_from_primal(sol))
            assert d >= sol.value - sol.fw_gap - 1e-9

    def test_failure_carries_result(self):
        # zero is far from optimal here: D(0) = 0 while the primal value is 1
        mu, nu = DiscreteMeasure([0.0, 1.0]), DiscreteMeasure([0.0, 3.0])
        with pytest.raises(ConvergenceFailure) as info:
            maximize_dual(mu, nu, quadratic(), tol=1e-12, init="zero", max_iter=3)
        assert info.value.result.iterations == 3

    def test_lipschitz_constrained(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            mu, nu = random_instance(rng)
            L = effective_lipschitz_bound(quadratic(), mu.points, nu.points)
            res = maximize_dual(mu, nu, quadratic(), tol=1e-4, L=L)
            v = res.psi.values
            dist = np.linalg.norm(nu.points[:, None] - nu.points[None], axis=2)
            assert np.max(np.abs(v[:, None] - v[None]) - L * dist) <= 1e-9
            assert res.value <= res.primal + 1e-9 and res.gap <= 1e-4

    def test_tight_lipschitz_bound_only_lowers_dual(self):
        mu, nu = DiscreteMeasure([0.0, 1.0]), DiscreteMeasure([0.0, 3.0])
        free = maximize_dual(mu, nu, quadratic(), tol=1e-6)
        assert free.value == pytest.approx(1.0, abs=1e-6)
        with pytest.raises(ConvergenceFailure) as info:
            maximize_dual(mu, nu, quadratic(), tol=1e-6, L=0.1, max_iter=200)
        assert info.value.result.value <= 0.1 * 3.0 + 1e-9


class TestDualityGap:
    @pytest.mark.parametrize("mu,nu,tol,primal", [
        (DiscreteMeasure([-1.0, 1.0]), DiscreteMeasure([-2.0, 0.0, 2.0], [0.25, 0.5, 0.25]), 1e-4, 0.0),
        (DiscreteMeasure([0.0]), DiscreteMeasure([5.0]), 1e-6, 25.0),
        (DiscreteMeasure([-3.0, 3.0]), DiscreteMeasure([-1.0, 1.0]), 1e-3, 4.0),
    ])
    def test_examples(self, mu, nu, tol, primal):
        res = duality_gap(mu, nu, quadratic(), tol=tol)
        assert -1e-9 <= res.gap <= tol
        assert res.primal == pytest.approx(primal, abs=1e-8)


class TestPotential:
    def test_lipschitz_validation_and_extension(self):
        psi = DualPotential([[0.0], [1.0]], [0.0, 1.0], 1.0)
        assert psi.extend([3.0]) == 3.0 and psi.extend([0.5]) == 0.5
        with pytest.raises(InputError):
            DualPotential([[0.0], [1.0]], [0.0, 2.0], 1.0)
        with pytest.raises(InputError):
            DualPotential([[0.0], [1.0]], [0.0, 2.0]).extend([0.0])

    def test_json_round_trip(self):
        psi = DualPotential([[0.0, 1.0], [1.0, 0.0]], [0.5, -0.5], 2.0)
        back = DualPotential.from_dict(psi.to_dict())
        assert back.lipschitz_constraint == 2.0 and np.array_equal(back.values, psi.values)

    def test_tighten_is_lipschitz_and_below(self):
        rng = np.random.default_rng(13)
        ys, vals = rng.normal(size=(6, 2)), rng.normal(size=6) * 5
        out = lipschitz_tighten(vals, ys, 0.5)
        dist = np.linalg.norm(ys[:, None] - ys[None], axis=2)
        assert np.all(out <= vals) and np.max(np.abs(out[:, None] - out[None]) - 0.5 * dist) <= 1e-12
