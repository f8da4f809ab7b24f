"""Plans on ``X x P(Y)``: measures whose atoms pair a point with a whole kernel.

A coupling embeds as the plan with one atom ``(x_i, pi_x_i, mu_i)`` per
support point.  Going back, the intensity averages the kernels sitting over
each point.  Costs that are convex in the kernel can only go down on the way
back (Jensen), which is why optimizing over plans gives the same value as
optimizing over couplings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostFunction
from .errors import DimensionMismatch, InputError, SupportMismatch
from .measures import (MASS_TOL, RENORMALIZE_TOL, Coupling, DiscreteMeasure, disintegrate,
                       match_atoms, merge_atoms, same_measure)


@dataclass(frozen=True, eq=False)
class LiftedAtom:
    x: np.ndarray
    p: DiscreteMeasure
    w: float


@dataclass(frozen=True, eq=False)
class LiftedPlan:
    """Finitely supported measure on ``X x P(Y)``.  Atoms with equal ``x`` are kept apart."""

    atoms: tuple[LiftedAtom, ...]

    def __init__(self, atoms):
        atoms = tuple(LiftedAtom(np.atleast_1d(np.asarray(a.x, dtype=float)), a.p, float(a.w))
                      for a in atoms)
        if not atoms:
            raise InputError("a lifted plan needs at least one atom")
        w = np.array([a.w for a in atoms])
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("atom weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > RENORMALIZE_TOL:
            raise InputError(f"atom weights sum to {w.sum()!r}, expected 1")
        if len({a.x.shape for a in atoms}) != 1:
            raise DimensionMismatch("atom locations have different dimensions")
        if len({a.p.dim for a in atoms}) != 1:
            raise DimensionMismatch("atom kernels live in different dimensions")
        if not all(np.all(np.isfinite(a.x)) for a in atoms):
            raise InputError("atom locations must be finite")
        total = w.sum()
        atoms = tuple(LiftedAtom(a.x, a.p, a.w / total) for a in atoms)
        object.__setattr__(self, "atoms", atoms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.w for a in self.atoms])

    @property
    def locations(self) -> np.ndarray:
        return np.array([a.x for a in self.atoms])

    def x_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        """Projection onto X, merged and sorted."""
        return merge_atoms(self.locations, self.weights)

    def intensity(self) -> tuple[np.ndarray, np.ndarray]:
        """Average of the kernels, ``sum_a w_a p_a``, merged and sorted."""
        pts = np.concatenate([a.p.points for a in self.atoms])
        wts = np.concatenate([a.w * a.p.weights for a in self.atoms])
        return merge_atoms(pts, wts)

    def to_dict(self) -> dict:
        return {"atoms": [{"x": a.x.tolist(), "p": a.p.to_dict(), "w": a.w} for a in self.atoms]}

    @classmethod
    def from_dict(cls, data: dict) -> "LiftedPlan":
        try:
            return cls([LiftedAtom(a["x"], DiscreteMeasure.from_dict(a["p"]), a["w"])
                        for a in data["atoms"]])
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad lifted plan record: {exc}") from exc

    def __repr__(self) -> str:
        return f"LiftedPlan(atoms={len(self.atoms)})"


def embed_J(pi: Coupling) -> LiftedPlan:
    """One atom ``(x_i, pi_x_i, mu_i)`` per positive-mass atom of ``mu``."""
    ker = disintegrate(pi)
    mu, nu = pi.mu, pi.nu
    return LiftedPlan([LiftedAtom(mu.points[i], DiscreteMeasure(nu.points, ker.rows[k]), mu.weights[i])
                       for k, i in enumerate(ker.indices)])


def intensity_hat(P: LiftedPlan, mu: DiscreteMeasure | None = None,
                  nu: DiscreteMeasure | None = None) -> Coupling:
    """The coupling ``sum_a w_a delta(x_a) (x) p_a``.

    ``mu`` and ``nu`` fix the atom lists of the result; by default they are
    the merged X-marginal and the merged intensity of ``P``.  When a
    reference list holds the same point several times, mass at that point is
    split in proportion to the reference weights.

    Raises:
        SupportMismatch: a location or kernel atom of ``P`` is missing from
            the reference measures.
    """
    if mu is None:
        mu = DiscreteMeasure(*P.x_marginal())
    if nu is None:
        nu = DiscreteMeasure(*P.intensity())
    if mu.dim != P.atoms[0].x.size or nu.dim != P.atoms[0].p.dim:
        raise DimensionMismatch("reference measures do not match the plan's dimensions")
    mat = np.zeros((mu.n, nu.n))
    row_hits = match_atoms(P.locations, mu.points)
    for atom, rows in zip(P.atoms, row_hits):
        rows = _charged(rows, mu.weights, atom.w, "location", atom.x)
        col_hits = match_atoms(atom.p.points, nu.points)
        col_mass = np.zeros(nu.n)
        for j, cols in enumerate(col_hits):
            cols = _charged(cols, nu.weights, atom.p.weights[j], "kernel atom", atom.p.points[j])
            if cols.size:
                col_mass[cols] += atom.p.weights[j] * nu.weights[cols] / nu.weights[cols].sum()
        if rows.size:
            share = mu.weights[rows] / mu.weights[rows].sum()
            mat[rows] += atom.w * share[:, None] * col_mass[None, :]
    return Coupling(mu, nu, mat, atol=1e-8)


def _charged(hits: np.ndarray, ref_weights: np.ndarray, mass: float, what: str, where) -> np.ndarray:
    """Reference atoms that can receive ``mass``; empty when the mass is zero."""
    hits = hits[ref_weights[hits] > 0]
    if hits.size == 0 and mass > 0:
        raise SupportMismatch(f"{what} {np.asarray(where).tolist()} is not charged by the reference")
    return hits


def in_Lambda(P: LiftedPlan, mu: DiscreteMeasure, nu: DiscreteMeasure, atol: float = MASS_TOL) -> bool:
    """Whether ``P`` projects to ``mu`` on X and its kernels average to ``nu``."""
    if mu.dim != P.atoms[0].x.size or nu.dim != P.atoms[0].p.dim:
        return False
    x_pts, x_w = P.x_marginal()
    i_pts, i_w = P.intensity()
    return (same_measure(x_pts, x_w, mu.points, mu.weights, atol)
            and same_measure(i_pts, i_w, nu.points, nu.weights, atol))


def lifted_cost(P: LiftedPlan, C: CostFunction) -> float:
    """``sum_a w_a C(x_a, p_a)``."""
    return float(sum(a.w * C.eval(a.x, a.p.points, a.p.weights) for a in P.atoms if a.w > 0))


def random_lifted_plan(pi: Coupling, rng: np.random.Generator, pieces: int = 3,
                       spread: float = 1.0) -> LiftedPlan:
    """Random plan with the same intensity coupling as ``pi``.

    Each kernel ``pi_x`` is split into ``pieces`` kernels that average back
    to it, so the result lies in the lifted set of ``(pi.mu, pi.nu)`` and
    ``intensity_hat`` maps it to ``pi``.  ``spread`` in ``[0, 1]`` controls
    how far the pieces move away from ``pi_x``.
    """
    ker = disintegrate(pi)
    atoms = []
    for k, i in enumerate(ker.indices):
        lam, parts = _split_kernel(ker.rows[k], pieces, rng, spread)
        for l, part in zip(lam, parts):
            atoms.append(LiftedAtom(pi.mu.points[i], DiscreteMeasure(pi.nu.points, part),
                                    pi.mu.weights[i] * l))
    return LiftedPlan(atoms)


def _split_kernel(p: np.ndarray, pieces: int, rng: np.random.Generator, spread: float):
    """Weights ``lam`` and probability vectors ``q_a`` with ``sum_a lam_a q_a = p``."""
    lam = rng.dirichlet(np.ones(pieces))
    supp = p > 0
    dirs = np.zeros((pieces, p.size))
    dirs[:, supp] = rng.dirichlet(np.ones(supp.sum()), size=pieces)
    dirs -= lam @ dirs
    # largest step keeping every piece nonnegative
    neg = dirs < 0
    room = np.min(np.broadcast_to(p, dirs.shape)[neg] / -dirs[neg]) if neg.any() else 1.0
    parts = np.clip(p + spread * min(room, 1.0) * dirs, 0.0, None)
    parts /= parts.sum(axis=1, keepdims=True)
    return lam, parts
