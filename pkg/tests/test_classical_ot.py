import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from conftest import random_measure
from weakot.classical_ot import (_northwest_corner, cost_matrix, solve_lp, transport_simplex,
                                 wasserstein_t)
from weakot.errors import DimensionMismatch, InputError
from weakot.measures import DiscreteMeasure


def vertex_enumeration(c, a, b):
    """Independent oracle: best basic solution over all (n+m-1)-cell subsets."""
    n, m = c.shape
    cells = list(itertools.product(range(n), range(m)))
    A = np.zeros((n + m, n * m))
    for k, (i, j) in enumerate(cells):
        A[i, k] = 1.0
        A[n + j, k] = 1.0
    rhs = np.concatenate([a, b])
    best = np.inf
    for basis in itertools.combinations(range(n * m), n + m - 1):
        sub = A[:, basis]
        if np.linalg.matrix_rank(sub) < n + m - 1:
            continue
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.all(x >= -1e-12) and np.allclose(sub @ x, rhs, atol=1e-10):
            best = min(best, float(c.ravel()[list(basis)] @ x))
    return best


class TestSolveLp:
    def test_one_by_one(self):
        sol = solve_lp([[7.0]], DiscreteMeasure([0.0]), DiscreteMeasure([1.0]))
        assert sol.value == 7.0 and sol.coupling.matrix.tolist() == [[1.0]]

    def test_identity(self):
        mu = DiscreteMeasure([0.0, 1.0])
        sol = solve_lp(cost_matrix(mu.points, mu.points), mu, mu)
        assert sol.value == 0.0
        np.testing.assert_allclose(sol.coupling.matrix, np.eye(2) / 2)

    def test_monotone_matching(self):
        mu, nu = DiscreteMeasure([0.0, 1.0]), DiscreteMeasure([2.0, 3.0])
        c = cost_matrix(mu.points, nu.points)
        assert solve_lp(c, mu, nu).value == pytest.approx(4.0, abs=1e-12)
        assert vertex_enumeration(c, mu.weights, nu.weights) == pytest.approx(4.0)

    def test_rejects_bad_costs(self):
        mu = DiscreteMeasure([0.0])
        with pytest.raises(InputError):
            solve_lp([[np.inf]], mu, mu)
        with pytest.raises(InputError):
            solve_lp([[1e13]], mu, mu)
        with pytest.raises(InputError):
            solve_lp([[1.0, 2.0]], mu, mu)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        mu, nu = random_measure(rng, 5, 1), random_measure(rng, 4, 1)
        c = rng.integers(0, 3, size=(5, 4)).astype(float)  # many ties
        s1, s2 = solve_lp(c, mu, nu), solve_lp(c, mu, nu)
        assert np.array_equal(s1.coupling.matrix, s2.coupling.matrix) and s1.basis == s2.basis

    def test_warm_start_reaches_same_value(self):
        rng = np.random.default_rng(1)
        mu, nu = random_measure(rng, 6, 1), random_measure(rng, 5, 1)
        c1, c2 = rng.random((6, 5)), rng.random((6, 5))
        warm = solve_lp(c2, mu, nu, basis=solve_lp(c1, mu, nu).basis)
        assert warm.value == pytest.approx(solve_lp(c2, mu, nu).value, abs=1e-12)

    def test_degenerate_marginals(self):
        # equal partial sums force degenerate pivots
        mu = DiscreteMeasure(np.arange(4.0), [0.25] * 4)
        nu = DiscreteMeasure(np.arange(4.0), [0.25] * 4)
        rng = np.random.default_rng(2)
        for _ in range(20):
            c = rng.integers(0, 4, size=(4, 4)).astype(float)
            assert solve_lp(c, mu, nu).value == pytest.approx(
                vertex_enumeration(c, mu.weights, nu.weights), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 3), st.integers(1, 3))
    def test_matches_vertex_enumeration(self, seed, n, m):
        rng = np.random.default_rng(seed)
        mu, nu = random_measure(rng, n, 1), random_measure(rng, m, 1)
        c = rng.normal(size=(n, m))
        assert solve_lp(c, mu, nu).value == pytest.approx(
            vertex_enumeration(c, mu.weights, nu.weights), abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 9), st.integers(1, 9))
    def test_duality_and_slackness(self, seed, n, m):
        rng = np.random.default_rng(seed)
        mu, nu = random_measure(rng, n, 1), random_measure(rng, m, 1)
        c = rng.normal(size=(n, m))
        sol = solve_lp(c, mu, nu)
        pi = sol.coupling.matrix
        assert sol.value == pytest.approx(float(np.sum(c * pi)), abs=1e-9)
        assert abs(sol.value - (mu.weights @ sol.dual_u + nu.weights @ sol.dual_v)) <= 1e-7
        reduced = c - sol.dual_u[:, None] - sol.dual_v[None, :]
        assert reduced.min() >= -1e-7
        assert np.all(np.abs(reduced[pi > 1e-12]) <= 1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 8), st.integers(1, 8))
    def test_matches_highs(self, seed, n, m):
        rng = np.random.default_rng(seed)
        mu, nu = random_measure(rng, n, 2), random_measure(rng, m, 2)
        c = cost_matrix(mu.points, nu.points)
        A = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
        ref = linprog(c.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
                      bounds=(0, None), method="highs")
        assert solve_lp(c, mu, nu).value == pytest.approx(ref.fun, abs=1e-8)

    def test_northwest_corner_is_feasible_tree(self):
        a, b = np.array([0.2, 0.3, 0.5]), np.array([0.5, 0.5])
        flow, basis = _northwest_corner(a, b)
        assert len(basis) == 4
        np.testing.assert_allclose(flow.sum(axis=1), a)
        np.testing.assert_allclose(flow.sum(axis=0), b)

    def test_projection_of_raw_core(self):
        c = np.array([[1.0, 0.0], [0.0, 1.0]])
        flow, u, v, tree, pivots = transport_simplex(c, np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        np.testing.assert_allclose(flow, [[0.0, 0.5], [0.5, 0.0]])


class TestWasserstein:
    def test_examples(self):
        assert wasserstein_t(DiscreteMeasure([0.0]), DiscreteMeasure([1.0])) == pytest.approx(1.0)
        m = DiscreteMeasure([0.0, 1.0, 5.0], [0.2, 0.3, 0.5])
        assert wasserstein_t(m, m) == pytest.approx(0.0, abs=1e-12)
        assert wasserstein_t(DiscreteMeasure([0.0, 1.0]), DiscreteMeasure([2.0, 3.0])) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            wasserstein_t(DiscreteMeasure([0.0]), DiscreteMeasure([[0.0, 1.0]]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([1.0, 2.0, 3.0]))
    def test_metric_axioms(self, seed, t):
        rng = np.random.default_rng(seed)
        a, b, c = (random_measure(rng, int(rng.integers(1, 6)), 2) for _ in range(3))
        ab, ba = wasserstein_t(a, b, t), wasserstein_t(b, a, t)
        assert ab == pytest.approx(ba, abs=1e-7)
        assert ab <= wasserstein_t(a, c, t) + wasserstein_t(c, b, t) + 1e-7
