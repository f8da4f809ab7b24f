"""Weak transport costs ``C(x, p)`` for kernels ``p`` on a fixed finite support.

The built-in family is barycentric: ``C(x, p) = theta(x - sum_j p_j y_j)``
with ``theta`` one of ``|z|^2``, ``|z|`` or ``|z|^t``.  Anything else can be
plugged in through value/gradient callbacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, InputError
from .measures import MASS_TOL, as_points

BARYCENTRIC_KINDS = ("quadratic", "euclidean", "power")


@dataclass(frozen=True)
class CostFunction:
    kind: str
    t: float = 2.0
    lipschitz_bound: float | None = None
    value_fn: Callable | None = None
    grad_fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in BARYCENTRIC_KINDS + ("custom",):
            raise InputError(f"unknown cost kind {self.kind!r}")
        if self.kind == "power" and self.t < 1:
            raise InputError("power cost needs t >= 1")
        if self.kind == "custom" and (self.value_fn is None or self.grad_fn is None):
            raise InputError("custom costs need both value and gradient callbacks")

    @property
    def barycentric(self) -> bool:
        return self.kind != "custom"

    @property
    def spec(self) -> str:
        if self.kind == "power":
            return f"barycentric:power:{self.t:g}"
        if self.kind == "custom":
            return "custom"
        return f"barycentric:{self.kind}"

    def with_lipschitz(self, L: float | None) -> "CostFunction":
        return CostFunction(self.kind, self.t, L, self.value_fn, self.grad_fn)

    # -- theta and its (sub)gradient, vectorized over the last axis -------------
    def theta(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "quadratic":
            return np.sum(z * z, axis=-1)
        r = np.linalg.norm(z, axis=-1)
        if self.kind == "euclidean":
            return r
        return r ** self.t

    def theta_grad(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "quadratic":
            return 2.0 * z
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        expo = 1.0 if self.kind == "euclidean" else self.t
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(r > 0, expo * r ** (expo - 2.0), 0.0)
        return factor * z

    # -- single-row interface ----------------------------------------------------
    def eval(self, x, support, p) -> float:
        x, support, p = _check_args(x, support, p)
        if self.kind == "custom":
            return float(self.value_fn(x, support, p))
        return float(self.theta(x - p @ support))

    def grad_weights(self, x, support, p) -> np.ndarray:
        """Gradient of :meth:`eval` in the weights ``p`` with the support fixed."""
        x, support, p = _check_args(x, support, p)
        if self.kind == "custom":
            return np.asarray(self.grad_fn(x, support, p), dtype=float)
        return -support @ self.theta_grad(x - p @ support)

    # -- many rows at once (solver internals; no validation) ---------------------
    def rows_value(self, xs: np.ndarray, support: np.ndarray, kernels: np.ndarray) -> np.ndarray:
        if self.kind == "custom":
            return np.array([self.value_fn(x, support, p) for x, p in zip(xs, kernels)], dtype=float)
        return self.theta(xs - kernels @ support)

    def rows_grad(self, xs: np.ndarray, support: np.ndarray, kernels: np.ndarray) -> np.ndarray:
        if self.kind == "custom":
            return np.array([self.grad_fn(x, support, p) for x, p in zip(xs, kernels)], dtype=float)
        return -self.theta_grad(xs - kernels @ support) @ support.T


def _check_args(x, support, p):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    support = as_points(support)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if x.ndim != 1 or x.shape[0] != support.shape[1]:
        raise DimensionMismatch(f"x has dimension {x.shape}, support has dimension {support.shape[1]}")
    if p.shape != (support.shape[0],):
        raise DimensionMismatch(f"{support.shape[0]} support points but {p.size} weights")
    if np.any(p < -MASS_TOL) or abs(p.sum() - 1.0) > MASS_TOL:
        raise InputError("p must be a probability vector")
    return x, support, p


def quadratic(lipschitz_bound: float | None = None) -> CostFunction:
    return CostFunction("quadratic", 2.0, lipschitz_bound)


def euclidean(lipschitz_bound: float | None = None) -> CostFunction:
    return CostFunction("euclidean", 1.0, lipschitz_bound)


def power(t: float, lipschitz_bound: float | None = None) -> CostFunction:
    return CostFunction("power", float(t), lipschitz_bound)


def custom(value: Callable, grad: Callable, lipschitz_bound: float | None = None) -> CostFunction:
    """Cost from callbacks ``value(x, support, p)`` and ``grad(x, support, p)``.

    The value must be convex in ``p`` for the solver certificates to mean
    anything; this is not checked.
    """
    return CostFunction("custom", 2.0, lipschitz_bound, value, grad)


def parse_cost(spec: str, t: float | None = None, lipschitz_bound: float | None = None) -> CostFunction:
    """Parse ``barycentric:quadratic``, ``barycentric:euclidean`` or ``barycentric:power:<t>``."""
    parts = spec.strip().split(":")
    if len(parts) < 2 or parts[0] != "barycentric":
        raise InputError(f"cannot parse cost spec {spec!r}")
    kind = parts[1]
    if kind == "quadratic" and len(parts) == 2:
        return quadratic(lipschitz_bound)
    if kind == "euclidean" and len(parts) == 2:
        return euclidean(lipschitz_bound)
    if kind == "power" and len(parts) in (2, 3):
        if len(parts) == 3:
            try:
                t = float(parts[2])
            except ValueError as exc:
                raise InputError(f"bad exponent in cost spec {spec!r}") from exc
        if t is None:
            raise InputError("power cost needs an exponent (barycentric:power:<t> or --t)")
        return power(t, lipschitz_bound)
    raise InputError(f"cannot parse cost spec {spec!r}")


def effective_lipschitz_bound(C: CostFunction, xs, support) -> float:
    """A W1-Lipschitz constant of ``p -> C(x, p)`` valid on this finite support.

    Coarse: the largest gradient norm of ``theta`` over the convex hull of the
    support, using ``|mean(p) - mean(q)| <= W1(p, q)``.  Meant as a fallback
    when the caller did not supply ``C.lipschitz_bound``.
    """
    if not C.barycentric:
        raise InputError("no automatic Lipschitz bound for custom costs")
    if C.kind == "euclidean":
        return 1.0
    xs, support = as_points(xs), as_points(support)
    reach = float(np.max(np.linalg.norm(xs[:, None, :] - support[None, :, :], axis=2)))
    # |grad theta(z)| = t |z|^(t-1) is increasing in |z|, and |x - mean| <= reach
    return C.t * reach ** (C.t - 1.0)
