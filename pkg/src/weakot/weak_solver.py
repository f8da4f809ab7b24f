"""Primal weak transport: ``V(mu, nu) = min_pi sum_i mu_i C(x_i, pi_x_i)``.

The objective is convex in the coupling matrix, so it is minimized by
conditional gradient over the transportation polytope, with the exact
simplex of :mod:`weakot.classical_ot` as linear minimization oracle.  The
Frank-Wolfe gap gives a certified lower bound at every iterate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .classical_ot import OtSolution, random_coupling, solve_lp, transport_simplex
from .costs import CostFunction
from .errors import ConvergenceFailure, DimensionMismatch, InputError, InstanceTooLarge
from .measures import Coupling, DiscreteMeasure, barycentric_map, disintegrate

DEFAULT_MAX_ITER = 100_000
FACE_STEP_MAX_CELLS = 1500
METHODS = ("auto", "fw", "away", "corrective")


def default_tol(C: CostFunction) -> float:
    return 1e-8 if C.kind == "quadratic" else 1e-6


@dataclass(frozen=True, eq=False)
class WeakSolution:
    coupling: Coupling
    value: float
    fw_gap: float
    iterations: int
    history: tuple[tuple[float, float], ...]
    lower_bound: float
    converged: bool
    oracle: OtSolution | None = None

    @property
    def barycenters(self) -> np.ndarray:
        return barycentric_map(self.coupling)


class _Objective:
    """``F(pi)`` and its gradient matrix for a fixed instance."""

    def __init__(self, mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction):
        self.mu, self.nu, self.C = mu, nu, C
        self.rows = mu.support
        self.w = mu.weights[self.rows]
        self.xs = mu.points[self.rows]
        self.ys = nu.points

    def kernels(self, mat: np.ndarray) -> np.ndarray:
        k = mat[self.rows] / self.w[:, None]
        return np.clip(k, 0.0, None)

    def value(self, mat: np.ndarray) -> float:
        return float(self.w @ self.C.rows_value(self.xs, self.ys, self.kernels(mat)))

    def grad(self, mat: np.ndarray) -> np.ndarray:
        g = np.zeros(mat.shape)
        g[self.rows] = self.C.rows_grad(self.xs, self.ys, self.kernels(mat))
        return g

    def quadratic_step(self, mat: np.ndarray, direction: np.ndarray, gamma_max: float) -> float:
        """Exact minimizer over ``[0, gamma_max]`` of ``F(mat + gamma * direction)`` for theta = |.|^2."""
        resid = self.xs - self.kernels(mat) @ self.ys
        shift = (direction[self.rows] @ self.ys) / self.w[:, None]
        curv = float(self.w @ np.sum(shift * shift, axis=1))
        if curv <= 0.0:
            return gamma_max
        gamma = float(self.w @ np.sum(resid * shift, axis=1)) / curv
        return min(max(gamma, 0.0), gamma_max)

    def face_step(self, mat: np.ndarray) -> np.ndarray | None:
        """Newton step for theta = |.|^2 on the face of the current support.

        Minimizes the quadratic model over couplings with the same marginals
        and zeros off ``supp(mat)``, then backs off to the first cell that
        would turn negative.  The objective is a nonnegative convex quadratic,
        so the restricted minimum exists and the KKT system is consistent.
        """
        cells = np.argwhere(mat > 0)
        k = cells.shape[0]
        if k > FACE_STEP_MAX_CELLS:
            return None
        n, m = mat.shape
        ii, jj = cells[:, 0], cells[:, 1]
        yj = self.ys[jj]
        inv_w = np.zeros(n)
        inv_w[self.rows] = 1.0 / self.w
        hess = np.where(ii[:, None] == ii[None, :], 2.0 * (yj @ yj.T) * inv_w[ii][:, None], 0.0)
        cons = np.zeros((n + m, k))
        cons[ii, np.arange(k)] = 1.0
        cons[n + jj, np.arange(k)] = 1.0
        kkt = np.block([[hess, cons.T], [cons, np.zeros((n + m, n + m))]])
        rhs = np.concatenate([-self.grad(mat)[ii, jj], np.zeros(n + m)])
        step = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
        dec = step < 0
        theta = 1.0
        if dec.any():
            theta = min(1.0, float(np.min(mat[ii[dec], jj[dec]] / -step[dec])))
        out = mat.copy()
        out[ii, jj] += theta * step
        return np.clip(out, 0.0, None)


def evaluate(pi: Coupling, C: CostFunction) -> float:
    """Weak transport cost ``sum_i mu_i C(x_i, pi_x_i)`` of a given coupling."""
    ker = disintegrate(pi)
    xs = pi.mu.points[ker.indices]
    vals = C.rows_value(xs, ker.support, ker.rows)
    return float(pi.mu.weights[ker.indices] @ vals)


def solve(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction, tol: float | None = None,
          max_iter: int = DEFAULT_MAX_ITER, init: Coupling | None = None,
          method: str = "auto") -> WeakSolution:
    """Minimize the weak transport cost over ``Pi(mu, nu)``.

    ``method`` is ``"fw"`` (plain Frank-Wolfe), ``"away"`` (Frank-Wolfe with
    away steps), ``"corrective"`` (each Frank-Wolfe step is followed by a
    Newton step on the face spanned by the current support) or ``"auto"``:
    corrective for the quadratic cost, plain Frank-Wolfe with step
    ``2 / (k + 2)`` otherwise.  The variants other than plain Frank-Wolfe use
    the exact line search of the quadratic cost.
    Stops once the certified gap ``value - lower_bound`` is at most ``tol``.

    Raises:
        ConvergenceFailure: ``max_iter`` reached first; the best iterate is
            attached as ``exc.result``.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"mu lives in R^{mu.dim}, nu in R^{nu.dim}")
    tol = default_tol(C) if tol is None else tol
    if tol <= 0:
        raise InputError("tol must be positive")
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}")
    line_search = C.kind == "quadratic"
    if method == "auto":
        method = "corrective" if line_search else "fw"
    away = method == "away"
    corrective = method == "corrective"
    if method != "fw" and not line_search:
        raise InputError(f"method {method!r} needs the exact line search of the quadratic cost")

    obj = _Objective(mu, nu, C)
    mat = (init.matrix if init is not None else np.outer(mu.weights, nu.weights)).copy()
    if init is not None and init.shape != (mu.n, nu.n):
        raise InputError("initial coupling has the wrong shape")
    # active set of the away-step variant: key -> [vertex, weight]
    active: dict = {"init": [mat.copy(), 1.0]}

    history: list[tuple[float, float]] = []
    lower = -math.inf
    best = None  # (value, matrix, raw oracle output)
    tree = flow = None
    k = 0
    while True:
        f = obj.value(mat)
        g = obj.grad(mat)
        flow, u, v, tree, _ = transport_simplex(g, mu.weights, nu.weights, tree=tree, flow=flow)
        s = flow
        g_mat = float(np.vdot(g, mat))
        gap = max(g_mat - float(np.vdot(g, s)), 0.0)
        history.append((f, gap))
        lower = max(lower, f - gap)
        if best is None or f <= best[0]:
            best = (f, mat.copy(), (s.copy(), u, v, tree))
        if best[0] - lower <= tol or k >= max_iter:
            break

        if away:
            away_key, away_val = None, -math.inf
            for kk, (vert, wt) in active.items():
                val = float(np.vdot(g, vert))
                if val > away_val:
                    away_key, away_val = kk, val
            away_gap = away_val - g_mat
            if gap >= away_gap or away_key is None:
                direction = s - mat
                gamma = obj.quadratic_step(mat, direction, 1.0)
                if gamma >= 1.0:
                    active = {}
                else:
                    for entry in active.values():
                        entry[1] *= 1.0 - gamma
                if tree in active:
                    active[tree][1] += gamma
                else:
                    active[tree] = [s.copy(), gamma]
            else:
                alpha = active[away_key][1]
                gamma_max = alpha / (1.0 - alpha) if alpha < 1.0 else 0.0
                direction = mat - active[away_key][0]
                gamma = obj.quadratic_step(mat, direction, gamma_max)
                for entry in active.values():
                    entry[1] *= 1.0 + gamma
                active[away_key][1] -= gamma
                if gamma >= gamma_max or active[away_key][1] <= 1e-15:
                    del active[away_key]
            active = {kk: e for kk, e in active.items() if e[1] > 0}
        else:
            direction = s - mat
            gamma = obj.quadratic_step(mat, direction, 1.0) if line_search else 2.0 / (k + 2.0)
        mat = mat + gamma * direction
        if corrective:
            cand = obj.face_step(mat)
            if cand is not None and obj.value(cand) <= obj.value(mat):
                mat = cand
        if away and active and k % 50 == 49:
            # resync with the active-set representation against round-off drift
            total = sum(e[1] for e in active.values())
            mat = sum(e[1] * e[0] for e in active.values()) / total
        k += 1

    value, best_mat, (s, u, v, tree) = best
    coupling = Coupling(mu, nu, best_mat, atol=1e-8)
    g = obj.grad(best_mat)
    oracle = OtSolution(Coupling(mu, nu, s, atol=1e-8), float(np.vdot(g, s)), u, v, tree)
    sol = WeakSolution(coupling, value, max(value - lower, 0.0), k, tuple(history), lower,
                       value - lower <= tol, oracle)
    if not sol.converged:
        raise ConvergenceFailure(
            f"Frank-Wolfe stopped after {k} iterations with gap {sol.fw_gap:.3g} > tol {tol:.3g}", sol)
    return sol


def solve_restarts(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction, restarts: int = 5,
                   seed: int = 0, tol: float | None = None,
                   max_iter: int = DEFAULT_MAX_ITER) -> tuple[list[WeakSolution], float]:
    """Solve from ``restarts`` random feasible starts; also return the largest
    deviation between their barycentric maps (0 when the optimal map is unique)."""
    rng = np.random.default_rng(seed)
    sols = []
    for r in range(restarts):
        init = None if r == 0 else random_coupling(mu, nu, rng)
        sols.append(solve(mu, nu, C, tol=tol, max_iter=max_iter, init=init))
    rows = mu.support
    maps = [s.barycenters[rows] for s in sols]
    dev = max((float(np.max(np.abs(m - maps[0]))) for m in maps), default=0.0)
    return sols, dev


# -- brute-force oracle ----------------------------------------------------------

def simplex_grid(m: int, resolution: int) -> np.ndarray:
    """All probability vectors of length ``m`` with entries in ``{0, 1/R, ..., 1}``."""
    rows = []
    for bars in itertools.combinations(range(resolution + m - 1), m - 1):
        parts = np.diff((-1,) + bars + (resolution + m - 1,)) - 1
        rows.append(parts)
    return np.array(rows, dtype=float).reshape(-1, m) / resolution


def brute_force(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction,
                grid_resolution: int = 32) -> tuple[float, Coupling]:
    """Exhaustive search over couplings whose kernels lie on a simplex grid.

    The kernels of all but the heaviest positive-mass atom range over the
    grid; the heaviest atom's kernel is then fixed by the column sums and the candidate is
    kept only if that kernel is nonnegative.  Every candidate is exactly
    feasible, so the result is an upper bound on ``V`` that can only
    decrease when the resolution is multiplied by an integer.
    """
    if mu.n * nu.n > 9:
        raise InstanceTooLarge(f"brute force is limited to n*m <= 9, got {mu.n}x{nu.n}")
    if grid_resolution < 8:
        raise InputError("grid_resolution must be at least 8")
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"mu lives in R^{mu.dim}, nu in R^{nu.dim}")
    rows = mu.support
    # the heaviest atom absorbs the remainder, which keeps it nonnegative most often
    rows = rows[np.argsort(mu.weights[rows], kind="stable")]
    w, xs, ys, target = mu.weights[rows], mu.points[rows], nu.points, nu.weights
    m = nu.n
    if rows.size == 1:
        kernels = target[None, :]
    else:
        grid = simplex_grid(m, grid_resolution)
        free = rows.size - 1
        row_cost = [w[i] * C.rows_value(np.repeat(xs[i:i + 1], grid.shape[0], axis=0), ys, grid)
                    for i in range(free)]
        last_w, last_x = w[-1], xs[-1:]
        best_val, best_idx = math.inf, None
        slack = 1e-12
        for outer in itertools.product(range(grid.shape[0]), repeat=free - 1):
            used = target.copy()
            partial = 0.0
            for i, gi in enumerate(outer):
                used = used - w[i] * grid[gi]
                partial += row_cost[i][gi]
            if np.any(used < -slack):
                continue
            last_free = free - 1
            rem = used[None, :] - w[last_free] * grid
            ok = np.all(rem >= -slack, axis=1)
            if not ok.any():
                continue
            cand = np.flatnonzero(ok)
            last_k = np.clip(rem[cand], 0.0, None) / last_w
            last_k /= last_k.sum(axis=1, keepdims=True)
            vals = partial + row_cost[last_free][cand] + last_w * C.rows_value(
                np.repeat(last_x, cand.size, axis=0), ys, last_k)
            j = int(np.argmin(vals))
            if vals[j] < best_val:
                best_val, best_idx = float(vals[j]), (outer, int(cand[j]), last_k[j])
        if best_idx is None:
            raise InputError("no feasible grid point; increase grid_resolution")
        outer, lf, last_k = best_idx
        kernels = np.array([grid[gi] for gi in outer] + [grid[lf], last_k])
    mat = np.zeros((mu.n, nu.n))
    mat[rows] = w[:, None] * kernels
    pi = Coupling(mu, nu, mat, atol=1e-8)
    return evaluate(pi, C), pi


def brute_force_refined(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction,
                        grid_resolution: int = 32) -> tuple[float, float, Coupling]:
    """Brute force at ``R`` and ``2R``; returns ``(value_2R, error_bound, coupling_2R)``.

    The error bound is the larger of the Richardson decrease
    ``value_R - value_2R`` and the convexity gap of the grid optimum,
    ``<G, pi_g - s>`` with ``G`` the gradient at ``pi_g`` and ``s`` the exact
    LP minimizer of ``<G, .>``.  The gap alone already bounds
    ``value_2R - V`` from above; the Richardson term is kept because nested
    dyadic grids can stall on the same point and make it read zero.
    """
    coarse, _ = brute_force(mu, nu, C, grid_resolution)
    fine, pi = brute_force(mu, nu, C, 2 * grid_resolution)
    return fine, max(coarse - fine, grid_gap(pi, C)), pi


def grid_gap(pi: Coupling, C: CostFunction) -> float:
    """Convexity gap ``max_s <grad F(pi), pi - s>`` over the couplings of ``pi``'s marginals."""
    ker = disintegrate(pi)
    grad = np.zeros(pi.matrix.shape)
    grad[ker.indices] = C.rows_grad(pi.mu.points[ker.indices], pi.nu.points, ker.rows)
    lp = solve_lp(grad, pi.mu, pi.nu)
    return max(float(np.sum(grad * pi.matrix)) - lp.value, 0.0)
