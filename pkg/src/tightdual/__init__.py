"""Certified lower bounds for the Jabr SOC relaxation of ACOPF via an all-tight dual."""

from .canon import CanonicalProblem, canonicalize
from .certify import CertifiedBound, certified_lower_bound, certify, eps_sweep, face_project
from .dual import DualPoint, dualnorm_objective, replace
from .fosolve import SolveConfig, SolveReport, export_nlp, solve_atd, warm_start
from .jabr import build_primal
from .netio import Network, read_case

__version__ = "0.1.0"


def load_problem(path) -> CanonicalProblem:
    """Read a MATPOWER case and return its canonical relaxation."""
    return canonicalize(build_primal(read_case(path)))


__all__ = [
    "CanonicalProblem",
    "CertifiedBound",
    "DualPoint",
    "Network",
    "SolveConfig",
    "SolveReport",
    "build_primal",
    "canonicalize",
    "certified_lower_bound",
    "certify",
    "dualnorm_objective",
    "eps_sweep",
    "export_nlp",
    "face_project",
    "load_problem",
    "read_case",
    "replace",
    "solve_atd",
    "warm_start",
]
