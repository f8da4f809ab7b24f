"""Finitely supported measures, couplings and their kernels.

Measures are labeled atom lists: duplicate points are kept as separate atoms
and never merged.  All arrays are made read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InputError, SupportMismatch

#: Tolerance on weight sums and coupling marginals.
MASS_TOL = 1e-9
#: Largest deviation of a weight sum from 1 that is silently renormalized.
RENORMALIZE_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def as_points(points) -> np.ndarray:
    """Coerce ``points`` to an ``(n, d)`` float array; a flat list means d = 1."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise InputError(f"points must be a list of vectors, got array of shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Probability measure ``sum_i weights[i] * delta(points[i])`` on R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None):
        pts = as_points(points)
        n, d = pts.shape
        if n == 0 or d == 0:
            raise InputError("a measure needs at least one atom of dimension >= 1")
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if w.shape != (n,):
            raise InputError(f"{n} points but {w.size} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise InputError("points and weights must be finite")
        if np.any(w < 0):
            raise InputError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise InputError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w / total))

    @classmethod
    def dirac(cls, point) -> "DiscreteMeasure":
        return cls([np.atleast_1d(np.asarray(point, dtype=float))], [1.0])

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def support(self) -> np.ndarray:
        """Indices of atoms carrying positive mass."""
        return np.flatnonzero(self.weights > 0)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def translate(self, shift) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points + np.asarray(shift, dtype=float), self.weights)

    def scale(self, s: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points * s, self.weights)

    def permute(self, order) -> "DiscreteMeasure":
        order = np.asarray(order)
        return DiscreteMeasure(self.points[order], self.weights[order])

    def canonical(self) -> tuple[np.ndarray, np.ndarray]:
        """Merged, lexicographically sorted ``(points, weights)`` of the positive-mass atoms.

        Used only for comparing measures as measures; the atom list itself is
        never merged.
        """
        return merge_atoms(self.points, self.weights)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteMeasure":
        try:
            return cls(data["points"], data.get("weights"))
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad measure record: {exc}") from exc

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"


def merge_atoms(points: np.ndarray, weights: np.ndarray, atol: float = 1e-12):
    """Sum weights of coincident points and sort lexicographically; drops zero mass."""
    pts = as_points(points)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    pts, w = pts[keep], w[keep]
    if pts.shape[0] == 0:
        return pts, w
    order = np.lexsort(pts.T[::-1])
    pts, w = pts[order], w[order]
    out_p, out_w = [pts[0]], [w[0]]
    for p, wi in zip(pts[1:], w[1:]):
        if np.all(np.abs(p - out_p[-1]) <= atol):
            out_w[-1] += wi
        else:
            out_p.append(p)
            out_w.append(wi)
    return np.array(out_p), np.array(out_w)


def same_measure(p_points, p_weights, q_points, q_weights, atol: float = MASS_TOL) -> bool:
    """Equality of two finitely supported measures after merging and canonical sorting."""
    a_pts, a_w = merge_atoms(p_points, p_weights)
    b_pts, b_w = merge_atoms(q_points, q_weights)
    # tiny atoms may appear on one side only
    a_big, b_big = a_w > atol, b_w > atol
    a_pts, a_w, b_pts, b_w = a_pts[a_big], a_w[a_big], b_pts[b_big], b_w[b_big]
    if a_pts.shape != b_pts.shape:
        return False
    return bool(np.allclose(a_pts, b_pts, rtol=0, atol=1e-12) and np.all(np.abs(a_w - b_w) <= atol))


def match_atoms(points: np.ndarray, reference: np.ndarray, atol: float = 1e-12) -> list[np.ndarray]:
    """For each row of ``points``, the indices of coincident rows of ``reference``."""
    ref = as_points(reference)
    out = []
    for p in as_points(points):
        out.append(np.flatnonzero(np.all(np.abs(ref - p) <= atol, axis=1)))
    return out


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between ``mu`` (rows) and ``nu`` (columns)."""

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    matrix: np.ndarray
    _kernel: "Kernel | None" = field(default=None, repr=False, compare=False)

    def __init__(self, mu: DiscreteMeasure, nu: DiscreteMeasure, matrix, *, atol: float = MASS_TOL,
                 _kernel: "Kernel | None" = None):
        mat = np.array(matrix, dtype=float)
        if mat.shape != (mu.n, nu.n):
            raise InputError(f"coupling matrix has shape {mat.shape}, expected {(mu.n, nu.n)}")
        if mu.dim != nu.dim:
            raise DimensionMismatch(f"mu lives in R^{mu.dim}, nu in R^{nu.dim}")
        if not np.all(np.isfinite(mat)):
            raise InputError("coupling entries must be finite")
        if np.any(mat < -atol):
            raise InputError("coupling entries must be nonnegative")
        mat = np.clip(mat, 0.0, None)
        row_err = np.max(np.abs(mat.sum(axis=1) - mu.weights))
        col_err = np.max(np.abs(mat.sum(axis=0) - nu.weights))
        if row_err > atol or col_err > atol:
            raise InputError(f"marginal mismatch: rows off by {row_err:.3g}, columns off by {col_err:.3g}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "matrix", _frozen(mat))
        object.__setattr__(self, "_kernel", _kernel)

    @classmethod
    def product(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> "Coupling":
        return cls(mu, nu, np.outer(mu.weights, nu.weights))

    @classmethod
    def from_kernel(cls, mu: DiscreteMeasure, kernel: "Kernel") -> "Coupling":
        """Build ``mu(dx) k_x(dy)``; the column marginal is whatever results.

        The kernel is remembered, so :func:`disintegrate` returns its rows
        unchanged instead of dividing the matrix again.
        """
        mat = np.zeros((mu.n, kernel.support.shape[0]))
        mat[kernel.indices] = mu.weights[kernel.indices, None] * kernel.rows
        nu = DiscreteMeasure(kernel.support, mat.sum(axis=0))
        return cls(mu, nu, mat, _kernel=kernel)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def with_matrix(self, matrix, atol: float = MASS_TOL) -> "Coupling":
        return Coupling(self.mu, self.nu, matrix, atol=atol)

    def to_dict(self) -> dict:
        return {"mu": self.mu.to_dict(), "nu": self.nu.to_dict(), "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Coupling":
        try:
            mu = DiscreteMeasure.from_dict(data["mu"])
            nu = DiscreteMeasure.from_dict(data["nu"])
            return cls(mu, nu, data["matrix"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad coupling record: {exc}") from exc

    def __repr__(self) -> str:
        return f"Coupling(shape={self.shape})"


@dataclass(frozen=True, eq=False)
class Kernel:
    """Conditional laws ``rows[k]`` of the atoms ``indices[k]`` (those with positive mass)."""

    indices: np.ndarray
    rows: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))
        object.__setattr__(self, "rows", _frozen(self.rows))
        object.__setattr__(self, "support", _frozen(as_points(self.support)))
        if self.rows.shape != (self.indices.size, self.support.shape[0]):
            raise InputError("kernel rows do not match indices/support")
        if self.rows.size and np.max(np.abs(self.rows.sum(axis=1) - 1.0)) > MASS_TOL:
            raise InputError("kernel rows must be probability vectors")

    def row(self, i: int) -> np.ndarray:
        """Kernel of atom ``i``; raises ``KeyError`` for zero-mass atoms."""
        pos = np.flatnonzero(self.indices == i)
        if pos.size == 0:
            raise KeyError(i)
        return self.rows[pos[0]]

    def recombine(self, mu: DiscreteMeasure) -> np.ndarray:
        mat = np.zeros((mu.n, self.support.shape[0]))
        mat[self.indices] = mu.weights[self.indices, None] * self.rows
        return mat


def disintegrate(pi: Coupling) -> Kernel:
    """Kernel ``pi_x = pi[i, :] / mu_i`` for every atom with positive mass."""
    if pi._kernel is not None:
        return pi._kernel
    idx = pi.mu.support
    rows = pi.matrix[idx] / pi.mu.weights[idx, None]
    # absorb round-off so rows are exact probability vectors
    rows = rows / rows.sum(axis=1, keepdims=True)
    return Kernel(idx, rows, pi.nu.points)


def barycentric_map(pi: Coupling) -> np.ndarray:
    """Barycenters ``T(x_i) = sum_j p_ij y_j`` as an ``(n, d)`` array.

    Rows of zero-mass atoms are NaN since their kernel is undefined.
    """
    ker = disintegrate(pi)
    out = np.full((pi.mu.n, pi.mu.dim), np.nan)
    out[ker.indices] = ker.rows @ ker.support
    return out


def conditional_restrict(pi: Coupling, mu_tilde: DiscreteMeasure) -> Coupling:
    """Keep the kernels of ``pi`` and replace its first marginal by ``mu_tilde``.

    Atoms of ``mu_tilde`` are matched to atoms of ``pi.mu`` by position of
    their points; every charged atom must sit on a positive-mass atom of
    ``pi.mu``.  Zero-mass atoms of ``mu_tilde`` get an empty row.
    """
    if mu_tilde.dim != pi.mu.dim:
        raise DimensionMismatch("mu_tilde and pi.mu live in different dimensions")
    ker = disintegrate(pi)
    positive = set(ker.indices.tolist())
    idx, rows = [], []
    for k, cand in enumerate(match_atoms(mu_tilde.points, pi.mu.points)):
        if mu_tilde.weights[k] <= 0:
            continue
        hits = [c for c in cand.tolist() if c in positive]
        if not hits:
            raise SupportMismatch(f"atom {mu_tilde.points[k].tolist()} is not in the support of pi.mu")
        idx.append(k)
        rows.append(ker.row(hits[0]))
    new_kernel = Kernel(np.array(idx, dtype=int), np.array(rows).reshape(len(idx), pi.nu.n), pi.nu.points)
    return Coupling.from_kernel(mu_tilde, new_kernel)
