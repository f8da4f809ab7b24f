"""Dual side of weak transport: ``D(psi) = mu(R_C psi) - nu(psi)``.

``R_C psi(x) = min_p p(psi) + C(x, p)`` is taken over kernels on the support
of ``nu``; the potential ``psi`` is stored only on that support.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from .costs import CostFunction
from .errors import ConvergenceFailure, InputError
from .measures import DiscreteMeasure, as_points
from .weak_solver import DEFAULT_MAX_ITER, WeakSolution, solve

INNER_TOL = 1e-10
PROBE_ITER = 100
INNER_MAX_ITER = 2_000


@dataclass(frozen=True, eq=False)
class DualPotential:
    """Values ``psi(y_j)`` on the support points; optionally ``L``-Lipschitz."""

    support: np.ndarray
    values: np.ndarray
    lipschitz_constraint: float | None = None

    def __post_init__(self):
        sup = as_points(self.support)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.shape != (sup.shape[0],):
            raise InputError(f"{sup.shape[0]} support points but {vals.size} values")
        if not np.all(np.isfinite(vals)):
            raise InputError("potential values must be finite")
        L = self.lipschitz_constraint
        if L is not None:
            dist = np.linalg.norm(sup[:, None, :] - sup[None, :, :], axis=2)
            excess = np.max(np.abs(vals[:, None] - vals[None, :]) - L * dist)
            if excess > 1e-9:
                raise InputError(f"potential violates its Lipschitz bound {L} by {excess:.3g}")
        sup.setflags(write=False)
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, nu: DiscreteMeasure) -> "DualPotential":
        return cls(nu.points, np.zeros(nu.n))

    def extend(self, y) -> float:
        """Lipschitz inf-extension ``min_j psi_j + L |y - y_j|`` off the support."""
        if self.lipschitz_constraint is None:
            raise InputError("extension off the support needs a Lipschitz constraint")
        y = np.atleast_1d(np.asarray(y, dtype=float))
        dist = np.linalg.norm(self.support - y, axis=1)
        return float(np.min(self.values + self.lipschitz_constraint * dist))

    def to_dict(self) -> dict:
        out = {"support": self.support.tolist(), "values": self.values.tolist()}
        if self.lipschitz_constraint is not None:
            out["L"] = self.lipschitz_constraint
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DualPotential":
        try:
            return cls(data["support"], data["values"], data.get("L"))
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad dual potential record: {exc}") from exc


def _values(psi) -> np.ndarray:
    return psi.values if isinstance(psi, DualPotential) else np.asarray(psi, dtype=float)


def _minimize_on_simplex(C: CostFunction, psi: np.ndarray, x: np.ndarray, ys: np.ndarray,
                         p0: np.ndarray | None = None, tol: float = INNER_TOL,
                         max_iter: int = INNER_MAX_ITER) -> tuple[float, np.ndarray, float]:
    """Minimize ``h(p) = psi.p + C(x, p)`` over the simplex.

    Returns ``(value, p, gap)`` where ``gap`` bounds ``value - min h``.  The
    workhorse is away-step Frank-Wolfe (vertices are coordinate vectors, so
    the linear oracle is a coordinate argmin).  The quadratic cost falls back
    on exact support enumeration, the euclidean cost on an exact treatment of
    its kink ``mean(p) = x``.
    """
    m = ys.shape[0]
    xs = x[None, :]

    def h(p):
        return float(psi @ p + C.rows_value(xs, ys, p[None, :])[0])

    if p0 is None:
        vertex_vals = psi + C.rows_value(np.repeat(xs, m, axis=0), ys, np.eye(m))
        p = np.zeros(m)
        p[int(np.argmin(vertex_vals))] = 1.0
    else:
        p = np.clip(np.asarray(p0, dtype=float), 0.0, None)
        p /= p.sum()
    gap = math.inf
    if C.kind != "quadratic" and C.barycentric:
        # a short Frank-Wolfe run, then a direct finish: FW crawls near nonsmooth
        # or flat points of theta
        p, gap = _afw_simplex(C, psi, x, ys, p, h, tol, min(PROBE_ITER, max_iter))
        if gap > tol and C.kind == "euclidean":
            p, gap = _euclidean_kink(C, psi, x, ys, p, gap, h, tol, 0)
        elif gap > tol:
            p, gap = _polish(C, psi, x, ys, p, gap, h)
    if gap > tol:
        p, gap = _afw_simplex(C, psi, x, ys, p, h, tol, max_iter)
    if gap > tol and C.kind == "quadratic":
        exact = _enumerate_supports(psi, x, ys)
        if exact is not None and h(exact) <= h(p):
            p = exact
            grad = psi + C.rows_grad(xs, ys, p[None, :])[0]
            gap = max(float(grad @ p - grad.min()), 0.0)
    elif gap > tol and C.kind == "euclidean":
        p, gap = _euclidean_kink(C, psi, x, ys, p, gap, h, tol, max_iter)
    return h(p), p, gap


def _afw_simplex(C, psi, x, ys, p, h, tol, max_iter):
    xs = x[None, :]
    gap = math.inf
    for _ in range(max_iter):
        grad = psi + C.rows_grad(xs, ys, p[None, :])[0]
        j_fw = int(np.argmin(grad))
        gap = float(grad @ p - grad[j_fw])
        if gap <= tol:
            break
        if C.kind == "euclidean" and np.linalg.norm(x - p @ ys) <= 1e-12 * (1.0 + np.linalg.norm(x)):
            break  # at the kink the subgradient oracle stalls; handled by the caller
        active = np.flatnonzero(p > 0)
        j_away = int(active[np.argmax(grad[active])])
        away_gap = float(grad[j_away] - grad @ p)
        fw_step = gap >= away_gap
        if fw_step:
            d = -p.copy()
            d[j_fw] += 1.0
            gmax = 1.0
        else:
            d = p.copy()
            d[j_away] -= 1.0
            gmax = p[j_away] / (1.0 - p[j_away]) if p[j_away] < 1.0 else 0.0
        if C.kind == "quadratic":
            resid = x - p @ ys
            shift = d @ ys
            curv = float(shift @ shift)
            slope = float(psi @ d - 2.0 * resid @ shift)
            gamma = gmax if curv <= 0 else min(max(-slope / (2.0 * curv), 0.0), gmax)
            if curv <= 0 and slope >= 0:
                gamma = 0.0
        elif C.barycentric:
            gamma = _radial_step(C, psi, x - p @ ys, d, ys, gmax)
        else:
            res = minimize_scalar(lambda g: h(p + g * d), bounds=(0.0, gmax), method="bounded",
                                  options={"xatol": 1e-13})
            gamma = float(res.x) if h(p + res.x * d) <= h(p) else 0.0
        if gamma <= 0.0 and fw_step:
            break  # no progress along the steepest vertex direction
        p = np.clip(p + gamma * d, 0.0, None)
        p /= p.sum()
        if C.kind == "quadratic":
            p = _face_correction(psi, x, ys, p, h)
    return p, gap


def _simplex_gap(C, psi, x, ys, p) -> float:
    grad = psi + C.rows_grad(x[None, :], ys, p[None, :])[0]
    return max(float(grad @ p - grad.min()), 0.0)


def _polish(C, psi, x, ys, p, gap, h):
    """SLSQP from the Frank-Wolfe iterate, kept only if its certified gap is smaller."""
    m = ys.shape[0]
    res = minimize(h, p, jac=lambda q: psi + C.rows_grad(x[None, :], ys, q[None, :])[0],
                   method="SLSQP", bounds=[(0.0, 1.0)] * m,
                   constraints=[{"type": "eq", "fun": lambda q: q.sum() - 1.0, "jac": lambda q: np.ones(m)}],
                   options={"ftol": 1e-15, "maxiter": 500})
    q = np.clip(res.x, 0.0, None)
    q /= q.sum()
    q_gap = _simplex_gap(C, psi, x, ys, q)
    return (q, q_gap) if q_gap < gap and h(q) <= h(p) + gap else (p, gap)


def _ball_certificate(psi, x, ys) -> tuple[float, np.ndarray]:
    """``max_{|u| <= 1} min_j psi_j + <u, x - y_j>``, a lower bound on ``min h`` for theta = |.|.

    Weak duality: ``|z| >= <u, z>`` for unit-ball ``u``.  The returned value
    is recomputed at a feasible ``u``, so it is a valid bound whatever the
    accuracy of the inner optimizer.
    """
    d = ys.shape[1]
    diff = x[None, :] - ys

    def bound(u):
        u = u / max(1.0, float(np.linalg.norm(u)))
        return float(np.min(psi + diff @ u)), u

    # epigraph form: maximize t subject to t <= psi_j + <u, x - y_j>, |u|^2 <= 1
    z0 = np.concatenate([np.zeros(d), [float(np.min(psi))]])
    cut_jac = np.hstack([diff, -np.ones((diff.shape[0], 1))])
    cons = [{"type": "ineq", "fun": lambda z: psi + diff @ z[:d] - z[d], "jac": lambda z: cut_jac},
            {"type": "ineq", "fun": lambda z: 1.0 - z[:d] @ z[:d],
             "jac": lambda z: np.concatenate([-2.0 * z[:d], [0.0]])}]
    res = minimize(lambda z: -z[d], z0, jac=lambda z: np.concatenate([np.zeros(d), [-1.0]]),
                   constraints=cons, method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
    return max(bound(res.x[:d]), bound(np.zeros(d)), key=lambda r: r[0])


def _euclidean_kink(C, psi, x, ys, p, gap, h, tol, max_iter):
    """Finish the theta = |.| problem when Frank-Wolfe stalls.

    Candidates: the best kernel with ``mean(p) = x`` (a linear program) and
    a restart from the vertex singled out by the ball certificate.  The gap
    reported is against the ball certificate, which is exact at the optimum.
    """
    m = ys.shape[0]
    cands = [p]
    lp = linprog(psi, A_eq=np.vstack([ys.T, np.ones((1, m))]), b_eq=np.concatenate([x, [1.0]]),
                 bounds=(0, None), method="highs")
    if lp.status == 0:
        q = np.clip(lp.x, 0.0, None)
        cands.append(q / q.sum())
    lower, u = _ball_certificate(psi, x, ys)
    if max_iter > 0:
        start = np.zeros(m)
        start[int(np.argmin(psi - ys @ u))] = 1.0
        cands.append(_afw_simplex(C, psi, x, ys, start, h, tol, max_iter)[0])
    best = min(cands, key=h)
    return best, min(gap if best is p else math.inf, max(h(best) - lower, 0.0))


def _radial_step(C: CostFunction, psi, resid, d, ys, gmax: float) -> float:
    """Exact minimizer over ``[0, gmax]`` of ``psi.(p + g d) + theta(resid - g Y^T d)``.

    The function is convex in ``g``; its derivative is monotone, so bisection
    on the sign of the derivative converges to machine precision.
    """
    lin = float(psi @ d)
    shift = d @ ys

    def slope(g):
        return lin - float(C.theta_grad(resid - g * shift) @ shift)

    if gmax <= 0.0 or slope(gmax) <= 0.0:
        return max(gmax, 0.0)
    # the one-sided derivative at 0 can differ from slope(0) at the kink of |.|
    lo, hi = 0.0, gmax
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if slope(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def _enumerate_supports(psi, x, ys, max_subsets: int = 50_000):
    """Exact minimizer of the quadratic inner problem by support enumeration.

    Some minimizer is supported on at most ``d + 1`` affinely independent
    points (a basic solution of the linear program in ``p`` at the optimal
    mean), and on such a support the KKT system is nonsingular.  Returns
    ``None`` when there are too many supports to enumerate.
    """
    m, d = ys.shape
    sizes = range(1, min(m, d + 1) + 1)
    if sum(math.comb(m, k) for k in sizes) > max_subsets:
        return None
    lin = psi - 2.0 * ys @ x
    best, best_val = None, math.inf
    for k in sizes:
        for face in itertools.combinations(range(m), k):
            face = list(face)
            yf = ys[face]
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = 2.0 * yf @ yf.T
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-lin[face], [1.0]]))
            except np.linalg.LinAlgError:
                continue
            q = sol[:k]
            if np.any(q < -1e-13) or not np.all(np.isfinite(q)):
                continue
            q = np.clip(q, 0.0, None)
            q /= q.sum()
            mean = q @ yf
            val = float(lin[face] @ q + mean @ mean)
            if val < best_val:
                best_val = val
                best = np.zeros(m)
                best[face] = q
    return best


def _face_correction(psi, x, ys, p, h):
    """Minimize the quadratic objective over the affine hull of ``supp(p)``, then
    step from ``p`` towards that minimizer as far as the simplex allows.

    This fully-corrective step makes the inner solver finite in practice
    (plain and away-step Frank-Wolfe crawl on ill-conditioned faces).
    """
    face = np.flatnonzero(p > 0)
    k = face.size
    if k < 2:
        return p
    yf = ys[face]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * yf @ yf.T
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([2.0 * yf @ x - psi[face], [1.0]])
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    if np.linalg.norm(kkt @ sol - rhs) > 1e-10 * (1.0 + np.linalg.norm(rhs)):
        return p  # unbounded along the face; leave it to the Frank-Wolfe steps
    q = np.zeros_like(p)
    q[face] = sol[:k]
    d = q - p
    neg = d < 0
    theta = 1.0 if not neg.any() else min(1.0, float(np.min(p[neg] / -d[neg])))
    cand = np.clip(p + theta * d, 0.0, None)
    cand /= cand.sum()
    return cand if h(cand) <= h(p) else p


def evaluate_rc(C: CostFunction, psi, x, support) -> tuple[float, np.ndarray]:
    """``R_C psi(x)`` and a minimizing kernel ``p`` on ``support``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ys = as_points(support)
    vals = _values(psi)
    if vals.shape != (ys.shape[0],):
        raise InputError("psi must have one value per support point")
    if x.shape != (ys.shape[1],):
        raise InputError("x and support have different dimensions")
    value, p, _ = _minimize_on_simplex(C, vals, x, ys)
    return value, p


def _dual_terms(mu, nu, C, vals, warm=None):
    rows = mu.support
    kernels = np.zeros((mu.n, nu.n))
    total = 0.0
    for i in rows:
        p0 = None if warm is None else warm[i]
        rc, p, _ = _minimize_on_simplex(C, vals, mu.points[i], nu.points, p0=p0)
        total += mu.weights[i] * rc
        kernels[i] = p
    return total - float(nu.weights @ vals), kernels


def dual_value(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction, psi) -> float:
    """``sum_i mu_i R_C psi(x_i) - sum_j nu_j psi_j``; a lower bound on ``V(mu, nu)``."""
    vals = _values(psi)
    if vals.shape != (nu.n,):
        raise InputError("psi must have one value per atom of nu")
    return _dual_terms(mu, nu, C, vals)[0]


def lipschitz_tighten(vals: np.ndarray, support: np.ndarray, L: float) -> np.ndarray:
    """Largest ``L``-Lipschitz function below ``vals`` on the support.

    Pairwise tightening ``psi_j <- min_k psi_k + L |y_j - y_k|``; a single
    sweep over all pairs already gives the fixed point.
    """
    dist = np.linalg.norm(support[:, None, :] - support[None, :, :], axis=2)
    return np.min(vals[None, :] + L * dist, axis=1)


def dual_from_primal(sol: WeakSolution) -> np.ndarray:
    """Potential read off the final linear oracle of a Frank-Wolfe solve.

    With ``(u, v)`` the LP duals of that oracle, ``psi = -v`` satisfies
    ``D(psi) >= value - fw_gap``.
    """
    if sol.oracle is None:
        raise InputError("solution carries no oracle duals")
    vals = -np.asarray(sol.oracle.dual_v, dtype=float)
    return vals - vals[0]


@dataclass(frozen=True, eq=False)
class DualResult:
    psi: DualPotential
    value: float
    primal: float
    gap: float
    iterations: int
    history: tuple[float, ...]


def maximize_dual(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction, tol: float = 1e-6,
                  max_iter: int = 5000, L: float | None = None,
                  primal: WeakSolution | float | None = None, init: str | np.ndarray = "primal",
                  primal_tol: float | None = None) -> DualResult:
    """Projected supergradient ascent on the concave dual ``D``.

    The supergradient is ``sum_i mu_i p*_i - nu`` with ``p*_i`` the inner
    minimizers; steps are ``a / (k + 1)`` with ``a = 1 / (1 + max |y|^2)``.
    With ``L`` the iterate is tightened to be ``L``-Lipschitz after every
    step.  ``psi(y_1)`` is pinned to 0 (``D`` is invariant under constant
    shifts).  ``init`` is ``"primal"`` (LP duals of the primal solver's last
    oracle, alongside zero), ``"zero"``, or an explicit vector.  The best
    iterate is returned; iteration stops once ``primal - dual <= tol``.

    Raises:
        ConvergenceFailure: final gap still above ``tol`` (result attached).
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    if primal is None or (isinstance(primal, str)):
        primal = solve(mu, nu, C, tol=primal_tol, max_iter=DEFAULT_MAX_ITER)
    primal_value = primal.value if isinstance(primal, WeakSolution) else float(primal)
    ys = nu.points

    def project(v):
        if L is not None:
            v = lipschitz_tighten(v, ys, L)
        return v - v[0]

    starts = []
    if isinstance(init, str):
        if init not in ("primal", "zero"):
            raise InputError(f"unknown init {init!r}")
        starts.append(np.zeros(nu.n))
        if init == "primal" and isinstance(primal, WeakSolution) and primal.oracle is not None:
            starts.append(dual_from_primal(primal))
    else:
        starts.append(np.asarray(init, dtype=float).reshape(nu.n))

    best_val, best_psi, warm = -math.inf, None, None
    for s in starts:
        s = project(s)
        val, kernels = _dual_terms(mu, nu, C, s)
        if val > best_val:
            best_val, best_psi, warm = val, s, kernels
    psi, current, kernels = best_psi.copy(), best_val, warm
    step0 = 1.0 / (1.0 + float(np.max(np.sum(ys * ys, axis=1))))
    history = [best_val]
    k = 0
    while primal_value - best_val > tol and k < max_iter:
        sup_grad = mu.weights @ kernels - nu.weights
        psi = project(psi + step0 / (k + 1.0) * sup_grad)
        current, kernels = _dual_terms(mu, nu, C, psi, warm=kernels)
        history.append(current)
        if current > best_val:
            best_val, best_psi = current, psi.copy()
        k += 1

    result = DualResult(DualPotential(ys, best_psi, L), best_val, primal_value,
                        primal_value - best_val, k, tuple(history))
    if result.gap > tol:
        raise ConvergenceFailure(
            f"dual ascent stopped after {k} steps with gap {result.gap:.3g} > tol {tol:.3g}", result)
    return result


class DualityGap(NamedTuple):
    primal: float
    dual: float
    gap: float


def duality_gap(mu: DiscreteMeasure, nu: DiscreteMeasure, C: CostFunction, tol: float = 1e-6,
                L: float | None = None, max_iter: int = 5000,
                primal_tol: float | None = None) -> DualityGap:
    """Solve both sides; ``gap = primal - dual`` (nonnegative up to round-off)."""
    sol = solve(mu, nu, C, tol=primal_tol)
    res = maximize_dual(mu, nu, C, tol=tol, max_iter=max_iter, L=L, primal=sol)
    return DualityGap(sol.value, res.value, sol.value - res.value)
