"""Canonical blocks ``(m, A, b, C, d, F, g)`` and box normalization ``(omega, sigma)``.

Cone rows in ``F``/``g`` are laid out cone by cone as ``(slot1, slot2, vec...)``.
The ``3|L|`` four-dimensional cones (Jabr, sending flow, receiving flow) come
first, one per 4-row stripe, and the cost epigraph cone closes the list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .jabr import COST, PrimalModel

__all__ = ["DegenerateBoxError", "ConeSpan", "CanonicalProblem", "canonicalize", "normalize"]


class DegenerateBoxError(ValueError):
    pass


@dataclass(frozen=True)
class ConeSpan:
    kind: str
    branch: int | None
    start: int
    stop: int


def normalize(primal: PrimalModel) -> tuple[np.ndarray, np.ndarray]:
    """Center and half-width of the variable box."""
    lo, hi = primal.lower, primal.upper
    sigma = 0.5 * (hi - lo)
    bad = np.flatnonzero(sigma <= 0)
    if bad.size:
        raise DegenerateBoxError(f"zero-width or inverted bounds at x{bad.tolist()}")
    return 0.5 * (hi + lo), sigma


@dataclass
class CanonicalProblem:
    m: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    F: sp.csr_matrix
    g: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    omega: np.ndarray
    sigma: np.ndarray
    cone_layout: list[ConeSpan]
    n_cone4: int
    cost_dim: int
    constant_cost: float = 0.0
    primal: PrimalModel | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.m.size

    @property
    def n_eq(self) -> int:
        return self.b.size

    @cached_property
    def AT(self) -> sp.csr_matrix:
        return self.A.T.tocsr()

    @cached_property
    def FT(self) -> sp.csr_matrix:
        return self.F.T.tocsr()

    @cached_property
    def C(self) -> sp.csr_matrix:
        eye = sp.identity(self.n, format="csr")
        return sp.vstack([eye, -eye]).tocsr()

    @cached_property
    def d(self) -> np.ndarray:
        return np.concatenate([-self.upper, self.lower])

    @property
    def cost_offset(self) -> int:
        return 4 * self.n_cone4

    def to_json(self) -> str:
        """Sparse-triplet dump; schema ``tightdual.canonical/1``."""

        def trip(M):
            M = M.tocoo()
            return {
                "shape": list(M.shape),
                "row": M.row.tolist(),
                "col": M.col.tolist(),
                "val": M.data.tolist(),
            }

        doc = {
            "schema": "tightdual.canonical/1",
            "m": self.m.tolist(),
            "A": trip(self.A),
            "b": self.b.tolist(),
            "C": trip(self.C),
            "d": self.d.tolist(),
            "F": trip(self.F),
            "g": self.g.tolist(),
            "omega": self.omega.tolist(),
            "sigma": self.sigma.tolist(),
            "cones": [[c.kind, c.branch, c.start, c.stop] for c in self.cone_layout],
            "constant_cost": self.constant_cost,
        }
        return json.dumps(doc)


def canonicalize(primal: PrimalModel) -> CanonicalProblem:
    omega, sigma = normalize(primal)
    rows, cols, vals = [], [], []
    g = []
    layout = []
    r = 0
    for cone in primal.cones:
        start = r
        for slot in (cone.slot1, cone.slot2, *cone.vec):
            if slot.index is None:
                g.append(slot.const)
            else:
                g.append(0.0)
                rows.append(r)
                cols.append(slot.index)
                vals.append(slot.scale)
            r += 1
        layout.append(ConeSpan(cone.kind, cone.branch, start, r))

    n4 = sum(1 for c in primal.cones if c.kind != COST)
    if any(c.kind == COST for c in primal.cones[:n4]) or any(
        c.stop - c.start != 4 for c in layout[:n4]
    ):
        raise ValueError("four-dimensional cones must precede the cost cone")
    F = sp.csr_matrix((vals, (rows, cols)), shape=(r, primal.layout.size))
    return CanonicalProblem(
        m=primal.m.copy(),
        A=primal.A.tocsr(),
        b=primal.b.copy(),
        F=F,
        g=np.array(g),
        lower=primal.lower.copy(),
        upper=primal.upper.copy(),
        omega=omega,
        sigma=sigma,
        cone_layout=layout,
        n_cone4=n4,
        cost_dim=layout[-1].stop - layout[-1].start - 2,
        constant_cost=primal.constant_cost,
        primal=primal,
    )
