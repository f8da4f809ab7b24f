"""Finite monotonicity certificates for weak transport couplings.

A coupling is tested on every small set ``S`` of support points: the kernels
``pi_x``, ``x in S``, are pooled and redistributed among the points of ``S``
in the cheapest way.  If some redistribution beats the current kernels (in
the plain, unweighted sum over ``S``), the coupling is not optimal, and the
redistribution yields an explicit cheaper coupling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostFunction
from .errors import (ConvergenceFailure, InputError, InstanceTooLarge, MissingLipschitzBound)
from .measures import Coupling, DiscreteMeasure, disintegrate
from .weak_solver import evaluate, solve

MAX_SUBSETS = 10**6
MAX_EXHAUSTIVE_SUPPORT = 6


@dataclass(frozen=True, eq=False)
class Violation:
    """An improving redistribution: rows ``kernels[k]`` replace ``pi_x`` for ``x = x_subset[k]``."""

    subset: tuple[int, ...]
    kernels: np.ndarray
    old_cost: float
    new_cost: float

    @property
    def improvement(self) -> float:
        return self.old_cost - self.new_cost

    def to_dict(self) -> dict:
        return {"subset": list(self.subset), "kernels": self.kernels.tolist(),
                "old_cost": self.old_cost, "new_cost": self.new_cost,
                "improvement": self.improvement}


@dataclass(frozen=True, eq=False)
class MonotonicityReport:
    passed: bool
    checked_subsets: int
    worst_violation: Violation | None
    first_violations: tuple[Violation, ...] = ()
    support_restricted: bool = False

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checked_subsets": self.checked_subsets,
            "worst_violation": None if self.worst_violation is None else self.worst_violation.to_dict(),
            "first_violations": [v.to_dict() for v in self.first_violations],
            "mode": "support-restricted monotonicity" if self.support_restricted else "monotonicity",
        }


def _subset_count(n: int, n_max: int) -> int:
    return sum(math.comb(n, k) for k in range(1, min(n_max, n) + 1))


def best_redistribution(pi: Coupling, C: CostFunction, subset, tol: float = 1e-7,
                        max_iter: int = 100_000) -> tuple[float, float, np.ndarray]:
    """Cheapest way to share the pooled kernels of ``subset`` among its points.

    Minimizes ``sum_{i in S} C(x_i, m_i)`` over probability vectors ``m_i``
    with ``sum_i m_i = sum_i pi_x_i``; this is ``|S|`` times a weak transport
    problem from the uniform measure on ``S`` to the normalized pool.  Only
    atoms charged by the pool are used.  Returns ``(old_cost, new_cost,
    kernels)`` with ``kernels`` on the full support of ``pi.nu``; the new cost
    is that of an actual feasible redistribution.
    """
    ker = disintegrate(pi)
    pos = {int(i): k for k, i in enumerate(ker.indices)}
    rows = np.array([ker.rows[pos[int(i)]] for i in subset])
    xs = pi.mu.points[list(subset)]
    ys = pi.nu.points
    size = len(subset)
    old = float(np.sum(C.rows_value(xs, ys, rows)))
    pool = rows.sum(axis=0)
    cols = np.flatnonzero(pool > 0)
    target = DiscreteMeasure(ys[cols], pool[cols] / size)
    try:
        sol = solve(DiscreteMeasure(xs), target, C, tol=tol / size, max_iter=max_iter)
    except ConvergenceFailure as exc:
        sol = exc.result
    kernels = np.zeros_like(rows)
    kernels[:, cols] = sol.coupling.matrix * size
    kernels /= kernels.sum(axis=1, keepdims=True)
    new = float(np.sum(C.rows_value(xs, ys, kernels)))
    return old, new, kernels


def _check(pi: Coupling, C: CostFunction, sizes, tol: float) -> MonotonicityReport:
    support = [int(i) for i in pi.mu.support]
    checked = 0
    worst, firsts = None, []
    for size in sizes:
        first_here = None
        for subset in itertools.combinations(support, size):
            checked += 1
            if size == 1:
                continue  # the pooled kernel must go back to the only point
            old, new, kernels = best_redistribution(pi, C, subset, tol=tol / 10)
            if old - new > tol:
                v = Violation(subset, kernels, old, new)
                if first_here is None:
                    first_here = v
                if worst is None or v.improvement > worst.improvement:
                    worst = v
        if first_here is not None:
            firsts.append(first_here)
    return MonotonicityReport(worst is None, checked, worst, tuple(firsts), not C.barycentric)


def check(pi: Coupling, C: CostFunction, N_max: int = 2, tol: float = 1e-6) -> MonotonicityReport:
    """Search all support subsets of size at most ``N_max`` for improving redistributions.

    Subsets are visited in lexicographic order; the first violation of each
    size and the largest overall are recorded.  With a user-supplied cost the
    report is labeled support-restricted, because redistributions only use
    atoms already charged by the pooled kernels.

    Raises:
        InputError: ``N_max`` outside ``[2, 4]`` or ``tol <= 0``.
        InstanceTooLarge: more than ``10**6`` subsets.
    """
    if not 2 <= N_max <= 4:
        raise InputError("N_max must be between 2 and 4")
    if tol <= 0:
        raise InputError("tol must be positive")
    n = pi.mu.support.size
    if _subset_count(n, N_max) > MAX_SUBSETS:
        raise InstanceTooLarge(f"{_subset_count(n, N_max)} subsets exceed the cap of {MAX_SUBSETS}")
    return _check(pi, C, range(1, min(N_max, n) + 1), tol)


def apply_violation(pi: Coupling, violation: Violation) -> Coupling:
    """A strictly cheaper coupling built from a violation.

    Moves a fraction ``eps = min_{i in S} mu_i`` of each kernel in ``S``
    toward its redistribution:
    ``pi' = pi + eps * sum_{i in S} delta(x_i) (x) (m_i - pi_x_i)``.
    Marginals are preserved because the ``m_i`` pool to the same total, and
    by convexity the cost drops by at least ``eps * improvement``.
    """
    ker = disintegrate(pi)
    pos = {int(i): k for k, i in enumerate(ker.indices)}
    idx = list(violation.subset)
    eps = float(np.min(pi.mu.weights[idx]))
    mat = pi.matrix.copy()
    for k, i in enumerate(idx):
        mat[i] += eps * (violation.kernels[k] - ker.rows[pos[i]])
    return pi.with_matrix(np.clip(mat, 0.0, None), atol=1e-8)


@dataclass(frozen=True, eq=False)
class MonotoneCertificate:
    optimal: bool
    report: MonotonicityReport
    lipschitz_bound: float
    coupling_value: float
    solver_value: float
    solver_agrees: bool

    def __bool__(self) -> bool:
        return self.optimal

    def to_dict(self) -> dict:
        return {"optimal": self.optimal, "report": self.report.to_dict(),
                "lipschitz_hypothesis": {"L": self.lipschitz_bound, "metric": "W1, euclidean ground metric"},
                "coupling_value": self.coupling_value, "solver_value": self.solver_value,
                "solver_agrees": self.solver_agrees}


def certify_optimal_via_monotone(pi: Coupling, C: CostFunction, tol: float = 1e-6) -> MonotoneCertificate:
    """Exhaustive monotonicity check, usable as an optimality certificate under a Lipschitz cost.

    All subsets of the support are checked, so at most six support points
    are allowed.  The answer is also compared with the primal solver: the
    ``solver_agrees`` field says whether the coupling's cost is within
    ``tol`` of the solver's value exactly when the check passed.

    Raises:
        MissingLipschitzBound: ``C`` carries no ``lipschitz_bound``.
        InstanceTooLarge: more than six support points.
    """
    if C.lipschitz_bound is None:
        raise MissingLipschitzBound("the sufficiency certificate needs a W1-Lipschitz bound on the cost")
    n = pi.mu.support.size
    if n > MAX_EXHAUSTIVE_SUPPORT:
        raise InstanceTooLarge(f"exhaustive check limited to {MAX_EXHAUSTIVE_SUPPORT} support points, got {n}")
    report = _check(pi, C, range(1, n + 1), tol)
    value = evaluate(pi, C)
    try:
        ref = solve(pi.mu, pi.nu, C).value
    except ConvergenceFailure as exc:
        ref = exc.result.value
    agrees = (value <= ref + tol) == report.passed
    return MonotoneCertificate(report.passed, report, float(C.lipschitz_bound), value, ref, agrees)
