"""Convex order, martingale couplings and the projection onto ``{eta : eta <=_c nu}``.

``eta <=_c nu`` holds iff some coupling of ``eta`` and ``nu`` has every row
barycenter equal to its ``eta``-atom.  That is a linear feasibility problem;
when it fails, the dual problem produces a convex function (a max of affine
pieces) whose ``eta``-integral exceeds its ``nu``-integral.

For the quadratic barycentric cost, the barycenters of an optimal weak
coupling push ``mu`` forward to the closest measure below ``nu`` in convex
order, through a map that is 1-Lipschitz on the support of ``mu``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .classical_ot import cost_matrix, solve_lp
from .costs import quadratic
from .errors import DimensionMismatch, InputError, NumericalFailure, PostconditionFailure
from .measures import Coupling, DiscreteMeasure, barycentric_map
from .weak_solver import DEFAULT_MAX_ITER, WeakSolution, solve, solve_restarts

MEAN_TOL = 1e-7
BARYCENTER_TOL = 1e-7
WITNESS_MARGIN = 1e-9
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


@dataclass(frozen=True, eq=False)
class MaxAffine:
    """Convex function ``f(y) = max_k <slopes[k], y> + intercepts[k]``."""

    slopes: np.ndarray
    intercepts: np.ndarray

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.max(y @ self.slopes.T + self.intercepts[None, :], axis=1)

    def to_dict(self) -> dict:
        return {"slopes": self.slopes.tolist(), "intercepts": self.intercepts.tolist()}


@dataclass(frozen=True, eq=False)
class ConvexOrderCertificate:
    dominated: bool
    martingale_coupling: Coupling | None = None
    separating_function: np.ndarray | None = None  # witness values on the atoms of nu
    witness: MaxAffine | None = None
    margin: float = 0.0  # eta(f) - nu(f) for the witness
    barycenter_error: float = 0.0

    def __bool__(self) -> bool:
        return self.dominated

    def to_dict(self) -> dict:
        out = {"dominated": self.dominated}
        if self.dominated:
            out["martingale_coupling"] = self.martingale_coupling.matrix.tolist()
            out["barycenter_error"] = self.barycenter_error
        else:
            out["separating_function"] = self.separating_function.tolist()
            out["witness"] = self.witness.to_dict()
            out["margin"] = self.margin
        return out


def _not_dominated(eta: DiscreteMeasure, nu: DiscreteMeasure, f: MaxAffine) -> ConvexOrderCertificate:
    margin = float(eta.weights @ f(eta.points) - nu.weights @ f(nu.points))
    if margin <= WITNESS_MARGIN:
        raise NumericalFailure(f"convex order undecided: witness margin {margin:.3g} is too small")
    return ConvexOrderCertificate(False, separating_function=f(nu.points), witness=f, margin=margin)


def _strassen_system(eta: DiscreteMeasure, nu: DiscreteMeasure, rows: np.ndarray):
    """Equality constraints on kernel variables ``k_ij`` (row-major) for the martingale problem."""
    r, m, d = rows.size, nu.n, nu.dim
    nk = r * m
    ri = np.repeat(np.arange(r), m)
    cj = np.tile(np.arange(m), r)
    var = np.arange(nk)
    row_sum = sparse.coo_matrix((np.ones(nk), (ri, var)), shape=(r, nk))
    col_sum = sparse.coo_matrix((eta.weights[rows][ri], (cj, var)), shape=(m, nk))
    bary = sparse.coo_matrix((nu.points[cj].T.ravel(),
                              ((ri[None, :] * d + np.arange(d)[:, None]).ravel(), np.tile(var, d))),
                             shape=(r * d, nk))
    b = np.concatenate([np.ones(r), nu.weights, eta.points[rows].ravel()])
    return sparse.vstack([row_sum, col_sum, bary]).tocsr(), b, r * d


def check_convex_order(eta: DiscreteMeasure, nu: DiscreteMeasure) -> ConvexOrderCertificate:
    """Decide ``eta <=_c nu`` with a certificate either way.

    Dominated: a coupling whose row barycenters equal the atoms of ``eta``.
    Not dominated: a max-affine convex ``f`` with ``eta(f) > nu(f)``.  Unequal
    means are caught first with an affine witness.

    Raises:
        DimensionMismatch: different ambient dimensions.
        NumericalFailure: the LP solver fails or the answer is too close to
            the boundary to certify.
    """
    if eta.dim != nu.dim:
        raise DimensionMismatch(f"eta lives in R^{eta.dim}, nu in R^{nu.dim}")
    shift = eta.mean() - nu.mean()
    norm = float(np.linalg.norm(shift))
    if norm > MEAN_TOL:
        return _not_dominated(eta, nu, MaxAffine(shift[None, :] / norm, np.zeros(1)))

    rows = eta.support
    r, m, d = rows.size, nu.n, nu.dim
    A, b, nb = _strassen_system(eta, nu, rows)
    nk = r * m
    # phase one: slacks absorb barycenter violations
    slack = sparse.vstack([sparse.coo_matrix((r + m, 2 * nb)),
                           sparse.hstack([-sparse.eye(nb), sparse.eye(nb)])])
    A1 = sparse.hstack([A, slack]).tocsr()
    c1 = np.concatenate([np.zeros(nk), np.ones(2 * nb)])
    res = linprog(c1, A_eq=A1, b_eq=b, bounds=(0, None), method="highs", options=_HIGHS)
    if res.status != 0:
        raise NumericalFailure(f"phase-one LP failed: {res.message}")
    scale = max(1.0, float(np.max(np.abs(nu.points))))
    if res.fun <= 1e-9 * scale:
        ker = np.clip(res.x[:nk].reshape(r, m), 0.0, None)
        ker /= ker.sum(axis=1, keepdims=True)
        mat = np.zeros((eta.n, m))
        mat[rows] = eta.weights[rows][:, None] * ker
        err = float(np.max(np.abs(ker @ nu.points - eta.points[rows])))
        if err > BARYCENTER_TOL:
            raise NumericalFailure(f"martingale coupling misses barycenters by {err:.3g}")
        return ConvexOrderCertificate(True, Coupling(eta, nu, mat, atol=1e-8), barycenter_error=err)

    # dual of phase one: multipliers (alpha, beta, gamma) with A^T lam <= 0 and |gamma| <= 1
    bounds = [(None, None)] * (r + m) + [(-1.0, 1.0)] * nb
    dres = linprog(-b, A_ub=A.T, b_ub=np.zeros(nk), bounds=bounds, method="highs", options=_HIGHS)
    if dres.status != 0:
        raise NumericalFailure(f"separation LP failed: {dres.message}")
    alpha, gamma = dres.x[:r], dres.x[r + m:].reshape(r, d)
    w = eta.weights[rows]
    return _not_dominated(eta, nu, MaxAffine(gamma / w[:, None], alpha / w))


def cyclic_monotonicity_gap(xs: np.ndarray, images: np.ndarray) -> float:
    """``max_sigma sum_i <x_i, T_sigma(i) - T_i>``; zero iff the pairs are cyclically monotone.

    Solved exactly as an assignment problem over all permutations.
    """
    gain = xs @ images.T
    r, c = linear_sum_assignment(gain, maximize=True)
    return max(float(gain[r, c].sum() - np.trace(gain)), 0.0)


def lipschitz_slack(xs: np.ndarray, images: np.ndarray) -> float:
    """``max_{i,k} |T_i - T_k| - |x_i - x_k|`` (at most 0 for a 1-Lipschitz map)."""
    dt = np.linalg.norm(images[:, None, :] - images[None, :, :], axis=2)
    dx = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=2)
    return float(np.max(dt - dx))


@dataclass(frozen=True, eq=False)
class Projection:
    mu_star: DiscreteMeasure
    points: np.ndarray  # support atoms x_i of mu
    images: np.ndarray  # T(x_i)
    indices: np.ndarray  # positions of those atoms in mu
    value: float
    checks: dict
    solution: WeakSolution = field(repr=False)

    def T(self, n: int) -> np.ndarray:
        """Map as an ``(n, d)`` array aligned with the atoms of ``mu``; NaN off the support."""
        out = np.full((n, self.points.shape[1]), np.nan)
        out[self.indices] = self.images
        return out

    def to_dict(self) -> dict:
        return {"mu_star": self.mu_star.to_dict(), "T": [self.points.tolist(), self.images.tolist()],
                "value": self.value, "checks": self.checks}


def project_brenier_strassen(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = 1e-8,
                             check_tol: float = 1e-6, max_iter: int = DEFAULT_MAX_ITER) -> Projection:
    """Closest measure to ``mu`` in ``W2`` among those dominated by ``nu`` in convex order.

    Solves the quadratic barycentric weak problem to gap ``tol`` and pushes
    ``mu`` forward by the barycentric map ``T`` (one atom per support atom of
    ``mu``).  Before returning it verifies (a) ``mu* <=_c nu``, (b)
    ``W2(mu, mu*)^2 = value`` within ``check_tol * (1 + value)``, and (c)
    ``|T x - T x'| <= |x - x'| + check_tol`` on all support pairs.  Cyclic
    monotonicity of the graph of ``T`` is reported alongside.

    Raises:
        PostconditionFailure: one of (a), (b), (c) fails; ``exc.failed``
            names them and ``exc.result`` holds the projection.
        ConvergenceFailure: the weak solver did not reach ``tol``.
    """
    if tol <= 0 or check_tol <= 0:
        raise InputError("tolerances must be positive")
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"mu lives in R^{mu.dim}, nu in R^{nu.dim}")
    sol = solve(mu, nu, quadratic(), tol=tol, max_iter=max_iter)
    rows = mu.support
    xs = mu.points[rows]
    images = barycentric_map(sol.coupling)[rows]
    mu_star = DiscreteMeasure(images, mu.weights[rows])

    order = check_convex_order(mu_star, nu)
    mu_pos = DiscreteMeasure(xs, mu.weights[rows])
    w2sq = solve_lp(cost_matrix(xs, images, 2), mu_pos, mu_star).value
    w2_error = abs(w2sq - sol.value)
    slack = lipschitz_slack(xs, images)
    cyc = cyclic_monotonicity_gap(xs, images)
    checks = {
        "convex_order": bool(order.dominated),
        "barycenter_error": order.barycenter_error,
        "w2_squared": w2sq,
        "w2_error": w2_error,
        "w2_matches_value": bool(w2_error <= check_tol * (1.0 + sol.value)),
        "lipschitz_slack": slack,
        "one_lipschitz": bool(slack <= check_tol),
        "cyclic_monotonicity_gap": cyc,
        "cyclically_monotone": bool(cyc <= check_tol),
        "fw_gap": sol.fw_gap,
    }
    proj = Projection(mu_star, xs, images, rows, sol.value, checks, sol)
    failed = [name for name, key in (("a", "convex_order"), ("b", "w2_matches_value"),
                                     ("c", "one_lipschitz")) if not checks[key]]
    if failed:
        raise PostconditionFailure(f"projection postconditions failed: {', '.join(failed)}", failed, proj)
    return proj


def uniqueness_probe(mu: DiscreteMeasure, nu: DiscreteMeasure, restarts: int = 5, seed: int = 0,
                     tol: float = 1e-8) -> float:
    """Largest atomwise disagreement of ``mu*`` across random restarts of the solver."""
    _, dev = solve_restarts(mu, nu, quadratic(), restarts=restarts, seed=seed, tol=tol)
    return dev


def optimality_criterion(pi: Coupling, T_ref, tol: float = 1e-6) -> bool:
    """Whether the barycentric map of ``pi`` equals ``T_ref`` on the support of ``mu``.

    ``T_ref`` is a :class:`Projection` for the same pair or an ``(n, d)``
    array aligned with the atoms of ``pi.mu``.
    """
    rows = pi.mu.support
    if isinstance(T_ref, Projection):
        T_ref = T_ref.T(pi.mu.n)
    ref = np.asarray(T_ref, dtype=float).reshape(pi.mu.n, pi.mu.dim)[rows]
    got = barycentric_map(pi)[rows]
    return bool(np.all(np.linalg.norm(got - ref, axis=1) <= tol))
