"""Weak optimal transport between finitely supported measures on R^d."""

from importlib import resources

from .classical_ot import OtSolution, solve_lp, wasserstein_t
from .costs import CostFunction, custom, euclidean, parse_cost, power, quadratic
from .duality import DualPotential, dual_value, duality_gap, evaluate_rc, maximize_dual
from .errors import (ConvergenceFailure, DimensionMismatch, InputError, InstanceTooLarge,
                     MissingLipschitzBound, NumericalFailure, PostconditionFailure,
                     SupportMismatch, WeakOTError)
from .lifted import LiftedAtom, LiftedPlan, embed_J, in_Lambda, intensity_hat, lifted_cost
from .measures import (Coupling, DiscreteMeasure, Kernel, barycentric_map, conditional_restrict,
                       disintegrate)
from .monotonicity import MonotonicityReport, apply_violation, certify_optimal_via_monotone, check
from .order import (ConvexOrderCertificate, check_convex_order, optimality_criterion,
                    project_brenier_strassen)
from .weak_solver import WeakSolution, brute_force, evaluate, solve

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a bundled JSON fixture, e.g. ``fixture_path("counterexample_mu.json")``."""
    return resources.files(__name__) / "fixtures" / name
