"""Exact discrete optimal transport by the transportation (network) simplex.

The basis is a spanning tree of the bipartite row/column graph with
``n + m - 1`` cells.  Entering cells are chosen by most negative reduced cost
(ties: lowest ``(i, j)``); after a run of degenerate pivots the solver
switches to Bland's rule, which rules out cycling.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InputError, NumericalFailure
from .measures import Coupling, DiscreteMeasure

MAX_COST = 1e12


@dataclass(frozen=True, eq=False)
class OtSolution:
    coupling: Coupling
    value: float
    dual_u: np.ndarray
    dual_v: np.ndarray
    basis: tuple[tuple[int, int], ...]
    pivots: int = 0


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    n, m = a.size, b.size
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    flow = np.zeros((n, m))
    basis = []
    i = j = 0
    while i < n and j < m:
        f = min(ra[i], rb[j])
        if i == n - 1:
            f = rb[j]
        elif j == m - 1:
            f = ra[i]
        f = max(f, 0.0)
        flow[i, j] = f
        basis.append((i, j))
        ra[i] -= f
        rb[j] -= f
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _flows_from_basis(a: np.ndarray, b: np.ndarray, basis) -> np.ndarray:
    """The unique flow supported on a spanning-tree basis (leaf elimination)."""
    n, m = a.size, b.size
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    flow = np.zeros((n, m))
    adj: list[set[int]] = [set() for _ in range(n + m)]
    for i, j in basis:
        adj[i].add(n + j)
        adj[n + j].add(i)
    leaves = deque(v for v in range(n + m) if len(adj[v]) == 1)
    remaining = len(basis)
    while remaining:
        v = leaves.popleft()
        if len(adj[v]) != 1:
            continue
        (w,) = adj[v]
        if v < n:
            i, j = v, w - n
            f = ra[i]
        else:
            i, j = w, v - n
            f = rb[j]
        flow[i, j] = f
        ra[i] -= f
        rb[j] -= f
        adj[v].discard(w)
        adj[w].discard(v)
        remaining -= 1
        if len(adj[w]) == 1:
            leaves.append(w)
    return flow


def _potentials(cost: np.ndarray, basis, n: int, m: int):
    u = np.zeros(n)
    v = np.zeros(m)
    adj: list[list[int]] = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    seen = np.zeros(n + m, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        node = stack.pop()
        for nb in adj[node]:
            if seen[nb]:
                continue
            seen[nb] = True
            if node < n:
                v[nb - n] = cost[node, nb - n] - u[node]
            else:
                u[nb] = cost[nb, node - n] - v[node - n]
            stack.append(nb)
    if not seen.all():
        raise NumericalFailure("basis is not a spanning tree")
    return u, v


def _tree_path(basis, n: int, m: int, start: int, goal: int) -> list[int]:
    """Node path from ``start`` to ``goal`` in the basis tree."""
    adj: list[list[int]] = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    parent = {start: -1}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def _validate(cost, mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    c = np.asarray(cost, dtype=float)
    if c.shape != (mu.n, nu.n):
        raise InputError(f"cost has shape {c.shape}, expected {(mu.n, nu.n)}")
    if not np.all(np.isfinite(c)):
        raise InputError("cost entries must be finite")
    if np.max(np.abs(c)) > MAX_COST:
        raise InputError(f"cost magnitude exceeds {MAX_COST:g}")
    return c


def transport_simplex(c: np.ndarray, a: np.ndarray, b: np.ndarray, tree=None, flow=None,
                      max_iter: int | None = None):
    """Core pivoting loop on raw arrays; returns ``(flow, u, v, tree, pivots)``.

    ``tree`` (with its ``flow``, if known) warm-starts from a basis that is
    feasible for the same marginals.  No input validation.
    """
    n, m = c.shape
    if tree is None:
        flow, tree = _northwest_corner(a, b)
    else:
        tree = [tuple(map(int, cell)) for cell in tree]
        if len(tree) != n + m - 1:
            raise InputError("warm-start basis must have n + m - 1 cells")
        flow = _flows_from_basis(a, b, tree) if flow is None else flow.copy()
    cap = max_iter if max_iter is not None else 50 * n * m
    scale = max(1.0, float(np.max(np.abs(c))))
    eps = 1e-12 * scale
    degenerate_run = 0
    bland = False
    pivots = 0
    in_basis = np.zeros((n, m), dtype=bool)
    for i, j in tree:
        in_basis[i, j] = True

    while True:
        u, v = _potentials(c, tree, n, m)
        reduced = c - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        if reduced.min() >= -eps:
            break
        if pivots >= cap:
            raise NumericalFailure(f"transportation simplex hit the iteration cap ({cap})")
        if bland:
            flat = np.flatnonzero(reduced.ravel() < -eps)[0]
        else:
            flat = int(np.argmin(reduced.ravel()))  # first minimum = lowest (i, j)
        ei, ej = divmod(int(flat), m)

        path = _tree_path(tree, n, m, n + ej, ei)
        # cycle: entering (ei, ej) is +, then alternate along the path col ej -> ... -> row ei
        cells = []
        for k in range(len(path) - 1):
            p, q = path[k], path[k + 1]
            cells.append((q, p - n) if p >= n else (p, q - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[cell] for cell in minus)
        leave = min(cell for cell in minus if flow[cell] <= theta)
        for cell in minus:
            flow[cell] -= theta
        for cell in plus:
            flow[cell] += theta
        flow[ei, ej] += theta
        flow[leave] = 0.0
        tree.remove(leave)
        tree.append((ei, ej))
        in_basis[leave] = False
        in_basis[ei, ej] = True
        pivots += 1
        if theta <= 1e-15:
            degenerate_run += 1
            if degenerate_run > n + m:
                bland = True
        else:
            degenerate_run = 0
    return np.clip(flow, 0.0, None), u, v, tuple(sorted(tree)), pivots


def solve_lp(cost, mu: DiscreteMeasure, nu: DiscreteMeasure, basis=None,
             max_iter: int | None = None) -> OtSolution:
    """Minimize ``<cost, pi>`` over the couplings of ``mu`` and ``nu``.

    ``basis`` optionally warm-starts the simplex from a previous optimal
    basis for the same marginals (e.g. successive Frank-Wolfe oracle calls).

    Raises:
        NumericalFailure: iteration cap (default ``50 n m`` pivots) reached.
    """
    c = _validate(cost, mu, nu)
    flow, u, v, tree, pivots = transport_simplex(c, mu.weights, nu.weights, tree=basis,
                                                 max_iter=max_iter)
    coupling = Coupling(mu, nu, flow, atol=1e-8)
    value = float(np.sum(c * coupling.matrix))
    return OtSolution(coupling, value, u, v, tree, pivots)


def cost_matrix(x: np.ndarray, y: np.ndarray, t: float = 2.0) -> np.ndarray:
    """``|x_i - y_j|^t`` for point arrays ``x`` (n, d) and ``y`` (m, d)."""
    diff = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    return diff ** t


def wasserstein_t(mu: DiscreteMeasure, nu: DiscreteMeasure, t: float = 2.0) -> float:
    """``W_t(mu, nu)``; the t-th root of the exact OT value for cost ``|x - y|^t``."""
    if t < 1:
        raise InputError("t must be >= 1")
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"mu lives in R^{mu.dim}, nu in R^{nu.dim}")
    sol = solve_lp(cost_matrix(mu.points, nu.points, t), mu, nu)
    return max(sol.value, 0.0) ** (1.0 / t)


def random_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure, rng: np.random.Generator,
                    vertices: int = 3) -> Coupling:
    """Random exactly-feasible coupling: a Dirichlet mixture of LP vertices for random costs."""
    lam = rng.dirichlet(np.ones(vertices))
    mat = sum(l * solve_lp(rng.random((mu.n, nu.n)), mu, nu).coupling.matrix for l in lam)
    return Coupling(mu, nu, mat)
