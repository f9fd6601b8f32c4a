"""Certified lower bounds from epsilon-stabilized dual points."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .canon import CanonicalProblem
from .dual import DualPoint, cone_slacks

__all__ = [
    "CertifiedBound",
    "ConeInfeasibleError",
    "face_project",
    "certified_lower_bound",
    "clb_value",
    "eps_sweep",
    "sweep_csv",
    "DEFAULT_DELTA",
]

log = logging.getLogger(__name__)

DEFAULT_DELTA = 1e-8
ZEROED, TIGHTENED = "zeroed", "tightened"


class ConeInfeasibleError(ValueError):
    """A supposedly projected dual point violates a dual cone."""


@dataclass
class CertifiedBound:
    f_clb: float
    f_clb_raw: float
    lam: np.ndarray
    point: DualPoint
    delta: float
    cases: list[str]
    reference: float | None = None
    projection_time: float = 0.0

    @property
    def gap(self) -> float | None:
        """Relative gap ``(f_clb - reference) / reference``; nonpositive for a sound bound."""
        if self.reference is None:
            return None
        return (self.f_clb - self.reference) / abs(self.reference)


def face_project(point: DualPoint, delta: float = DEFAULT_DELTA) -> DualPoint:
    """Move every cone tuple onto the boundary of the rotated cone.

    Tuples with ``scalar2 < delta`` are zeroed; the rest keep ``scalar2`` and
    ``vec`` and get ``scalar1 = |vec|^2 / (2 scalar2)``.  Works on reduced or
    full points and always returns a full point.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    out = point.copy()
    small = point.s2 < delta
    s2 = np.where(small, 0.0, point.s2)
    vec = np.where(small[:, None], 0.0, point.vec)
    s1 = np.zeros_like(s2)
    np.divide(np.sum(vec**2, axis=1), 2.0 * s2, out=s1, where=~small)
    out.s1, out.s2, out.vec = s1, s2, vec
    if point.cost_s2 < delta:
        out.cost_s1, out.cost_s2, out.cost_vec = 0.0, 0.0, np.zeros_like(point.cost_vec)
    else:
        out.cost_s1 = float(point.cost_vec @ point.cost_vec) / (2.0 * point.cost_s2)
    out.mu = None
    return out


def projection_cases(point: DualPoint, delta: float = DEFAULT_DELTA) -> list[str]:
    return [ZEROED if s < delta else TIGHTENED for s in point.s2] + [
        ZEROED if point.cost_s2 < delta else TIGHTENED
    ]


def clb_value(lam: np.ndarray, point: DualPoint, problem: CanonicalProblem) -> float:
    """``-||u M_sigma||_1 + u.omega + lam.b - d.g`` with ``u = m + A'lam - F'd`` (no constants)."""
    d = point.flat_cones()
    u = problem.m + problem.AT @ lam - problem.FT @ d
    return float(
        -np.abs(u) @ problem.sigma + u @ problem.omega + lam @ problem.b - d @ problem.g
    )


def _check_cones(point: DualPoint, tol: float = 1e-10) -> None:
    slack = cone_slacks(point)
    scale = np.maximum(
        1.0,
        np.append(np.sum(point.vec**2, axis=1), point.cost_vec @ point.cost_vec),
    )
    bad = np.flatnonzero(slack < -tol * scale)
    negative = np.any(point.s1 < 0) or np.any(point.s2 < 0)
    if bad.size or negative:
        raise ConeInfeasibleError(
            f"dual point is not cone-feasible (cones {bad[:10].tolist()}, min slack {slack.min():.3e})"
        )


def certified_lower_bound(
    lam: np.ndarray,
    point: DualPoint,
    problem: CanonicalProblem,
    reference: float | None = None,
    delta: float = DEFAULT_DELTA,
) -> CertifiedBound:
    """Evaluate the certified bound at a face-projected point.

    ``point`` must already satisfy every dual cone (use :func:`face_project`).
    """
    if not point.is_full:
        raise ConeInfeasibleError("point has no first scalars; face_project it first")
    _check_cones(point)
    raw = clb_value(np.asarray(lam, dtype=float), point, problem)
    return CertifiedBound(
        f_clb=raw + problem.constant_cost,
        f_clb_raw=raw,
        lam=np.asarray(lam, dtype=float),
        point=point,
        delta=delta,
        cases=projection_cases(point, delta),
        reference=reference,
    )


def certify(point: DualPoint, problem: CanonicalProblem, delta=DEFAULT_DELTA, reference=None):
    """Project a solver point and bound it in one go; records the projection time."""
    t0 = time.perf_counter()
    projected = face_project(point, delta)
    elapsed = time.perf_counter() - t0
    bound = certified_lower_bound(point.lam, projected, problem, reference=reference, delta=delta)
    bound.projection_time = elapsed
    return bound


@dataclass
class SweepRow:
    eps: float
    objective: float
    f_clb: float
    status: str
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def eps_sweep(problem: CanonicalProblem, eps_list, config=None, delta=DEFAULT_DELTA):
    """Solve the all-tight dual once per ``eps`` and certify each solution.

    Returns rows sorted by ``eps``.  A failing solve is recorded with NaN
    values and ``status = "error: ..."``; the sweep continues.
    """
    from dataclasses import replace

    from .fosolve import SolveConfig, solve_atd

    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps_list is empty")
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    if eps_list != sorted(eps_list):
        raise ValueError("eps_list must be sorted ascending")
    config = config or SolveConfig()
    rows = []
    for eps in eps_list:
        try:
            rep = solve_atd(problem, replace(config, eps=eps))
            bound = certify(rep.point, problem, delta=delta)
            rows.append(
                SweepRow(eps, rep.objective, bound.f_clb, rep.reason, rep.iterations)
            )
        except Exception as exc:  # recorded per row, sweep continues
            log.warning("sweep eps=%g failed: %s", eps, exc)
            rows.append(SweepRow(eps, float("nan"), float("nan"), f"error: {exc}"))
    return rows


def sweep_csv(rows) -> str:
    """CSV text with header ``eps,objective,f_clb,status``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "objective", "f_clb", "status"])
    for r in rows:
        w.writerow([repr(r.eps), repr(r.objective), repr(r.f_clb), r.status])
    return buf.getvalue()
