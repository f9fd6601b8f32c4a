"""Lifted-variable RSOC (Jabr) relaxation of ACOPF.

Primal variables are stacked as ``x = (t, Pg, Qg, Ps, Pr, Qs, Qr, s, c, w)``.
``t`` is the cost epigraph; ``Ps/Qs`` and ``Pr/Qr`` are the flows leaving the
from- and to-end of every branch; ``c, s`` are the lifted voltage products
per branch and ``w`` the squared voltage magnitudes per bus.  The flow limit
is a constant inside its cone block, so there is no limit variable.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .netio import Branch, Network

__all__ = [
    "DegenerateImpedanceError",
    "VarLayout",
    "FlowCoeffs",
    "Slot",
    "ConeBlock",
    "PrimalModel",
    "branch_coeffs",
    "build_primal",
    "default_bounds",
    "lift_voltages",
]

JABR, SEND, RECV, COST = "jabr", "send_flow", "recv_flow", "cost_epi"
MIN_WIDTH = 1e-6


class DegenerateImpedanceError(ValueError):
    pass


@dataclass(frozen=True)
class VarLayout:
    n_bus: int
    n_gen: int
    n_branch: int

    @property
    def size(self) -> int:
        return 1 + 2 * self.n_gen + 6 * self.n_branch + self.n_bus

    def _block(self, k: int) -> slice:
        sizes = [1, self.n_gen, self.n_gen] + [self.n_branch] * 6 + [self.n_bus]
        start = sum(sizes[:k])
        return slice(start, start + sizes[k])

    t = property(lambda self: self._block(0))
    pg = property(lambda self: self._block(1))
    qg = property(lambda self: self._block(2))
    ps = property(lambda self: self._block(3))
    pr = property(lambda self: self._block(4))
    qs = property(lambda self: self._block(5))
    qr = property(lambda self: self._block(6))
    s = property(lambda self: self._block(7))
    c = property(lambda self: self._block(8))
    w = property(lambda self: self._block(9))

    def blocks(self) -> dict[str, slice]:
        names = ["t", "pg", "qg", "ps", "pr", "qs", "qr", "s", "c", "w"]
        return {n: getattr(self, n) for n in names}


class FlowCoeffs(NamedTuple):
    """Rows of coefficients on ``(w_from, w_to, c, s)`` for each flow."""

    ps: tuple[float, float, float, float]
    pr: tuple[float, float, float, float]
    qs: tuple[float, float, float, float]
    qr: tuple[float, float, float, float]

    def evaluate(self, wf, wt, c, s):
        """Evaluate all four flows at lifted values (broadcasts over arrays)."""
        z = (wf, wt, c, s)
        return tuple(sum(a * v for a, v in zip(row, z)) for row in self)


def branch_coeffs(branch: Branch) -> FlowCoeffs:
    """Linear flow coefficients of the pi model with tap ratio and phase shift."""
    z = complex(branch.r, branch.x)
    if z == 0:
        raise DegenerateImpedanceError(
            f"branch {branch.f_bus}-{branch.t_bus}: r = x = 0"
        )
    y = 1.0 / z
    g, bser = y.real, y.imag
    half_b = branch.b_charge / 2.0
    tau = branch.tap
    # a = y*/T and a' = y*/conj(T); V_i V_j^* = c + js
    a = y.conjugate() / cmath.rect(tau, branch.shift)
    ap = y.conjugate() / cmath.rect(tau, -branch.shift)
    ps = (g / tau**2, 0.0, -a.real, a.imag)
    qs = (-(bser + half_b) / tau**2, 0.0, -a.imag, -a.real)
    pr = (0.0, g, -ap.real, -ap.imag)
    qr = (0.0, -(bser + half_b), -ap.imag, ap.real)
    return FlowCoeffs(ps, pr, qs, qr)


def lift_voltages(network: Network, v: np.ndarray, theta: np.ndarray):
    """Lifted ``(w, c, s)`` induced by bus voltage magnitudes and angles."""
    idx = network.bus_index
    f = np.array([idx(b.f_bus) for b in network.branches], dtype=int)
    t = np.array([idx(b.t_bus) for b in network.branches], dtype=int)
    w = v**2
    d = theta[f] - theta[t]
    return w, v[f] * v[t] * np.cos(d), v[f] * v[t] * np.sin(d)


@dataclass(frozen=True)
class Slot:
    """Either ``scale * x[index]`` or, when ``index`` is None, the constant ``const``."""

    index: int | None
    scale: float = 1.0
    const: float = 0.0


@dataclass(frozen=True)
class ConeBlock:
    """``2 * slot1 * slot2 >= ||vec||^2`` with each slot affine in ``x``."""

    kind: str
    branch: int | None
    slot1: Slot
    slot2: Slot
    vec: tuple[Slot, ...]

    @property
    def dim(self) -> int:
        return 2 + len(self.vec)


@dataclass
class PrimalModel:
    layout: VarLayout
    lower: np.ndarray
    upper: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: list[ConeBlock]
    m: np.ndarray
    constant_cost: float = 0.0
    cost_gens: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_branch(self) -> int:
        return self.layout.n_branch

    def objective(self, x: np.ndarray) -> float:
        """Relaxation objective in $/h including constant cost terms."""
        return float(self.m @ x) + self.constant_cost

    def cone_values(self, x: np.ndarray) -> np.ndarray:
        """``2*slot1*slot2 - ||vec||^2`` for every cone at ``x``."""

        def ev(sl: Slot) -> float:
            return sl.const if sl.index is None else sl.scale * x[sl.index]

        return np.array(
            [2 * ev(k.slot1) * ev(k.slot2) - sum(ev(v) ** 2 for v in k.vec) for k in self.cones]
        )


def default_bounds(network: Network) -> tuple[np.ndarray, np.ndarray]:
    lay = VarLayout(len(network.buses), len(network.generators), len(network.branches))
    lo = np.empty(lay.size)
    hi = np.empty(lay.size)
    gens = network.generators
    vmin = np.array([b.vmin for b in network.buses])
    vmax = np.array([b.vmax for b in network.buses])
    idx = network.bus_index
    f = np.array([idx(b.f_bus) for b in network.branches], dtype=int)
    t = np.array([idx(b.t_bus) for b in network.branches], dtype=int)
    rate = np.array([b.rate_a for b in network.branches])

    c2 = np.array([g.c2 for g in gens])
    pmax = np.array([g.pmax for g in gens])
    tbar = 10.0 * max(float(np.sum(c2 * pmax**2)), float(np.sum((c2 * pmax) ** 2))) + 1.0
    lo[lay.t], hi[lay.t] = 0.0, tbar
    lo[lay.pg], hi[lay.pg] = [g.pmin for g in gens], pmax
    lo[lay.qg], hi[lay.qg] = [g.qmin for g in gens], [g.qmax for g in gens]
    for blk in (lay.ps, lay.pr, lay.qs, lay.qr):
        lo[blk], hi[blk] = -rate, rate
    vv = vmax[f] * vmax[t]
    lo[lay.s], hi[lay.s] = -vv, vv
    lo[lay.c], hi[lay.c] = 0.0, vv
    lo[lay.w], hi[lay.w] = vmin**2, vmax**2
    # fixed quantities (e.g. pmin == pmax) get a tiny box; loosening keeps bounds valid
    narrow = hi - lo < MIN_WIDTH
    mid = 0.5 * (hi[narrow] + lo[narrow])
    lo[narrow], hi[narrow] = mid - 0.5 * MIN_WIDTH, mid + 0.5 * MIN_WIDTH
    return lo, hi


def build_primal(network: Network) -> PrimalModel:
    """Assemble the RSOC relaxation ``min m'x  s.t.  Ax + b = 0, box, cones``."""
    nb, ng, nl = len(network.buses), len(network.generators), len(network.branches)
    lay = VarLayout(nb, ng, nl)
    idx = network.bus_index
    rows, cols, vals = [], [], []

    def put(r, c, v):
        if v != 0.0:
            rows.append(r)
            cols.append(c)
            vals.append(v)

    b = np.zeros(2 * nb + 4 * nl)
    # bus balance: generation - demand - shunt = sum of outgoing flows
    W, PG, QG = lay.w.start, lay.pg.start, lay.qg.start
    for i, bus in enumerate(network.buses):
        rp, rq = 2 * i, 2 * i + 1
        b[rp], b[rq] = -bus.pd, -bus.qd
        put(rp, W + i, -bus.gs)
        put(rq, W + i, bus.bs)
    for k, g in enumerate(network.generators):
        i = idx(g.bus)
        put(2 * i, PG + k, 1.0)
        put(2 * i + 1, QG + k, 1.0)

    for l, br in enumerate(network.branches):
        i, j = idx(br.f_bus), idx(br.t_bus)
        put(2 * i, lay.ps.start + l, -1.0)
        put(2 * i + 1, lay.qs.start + l, -1.0)
        put(2 * j, lay.pr.start + l, -1.0)
        put(2 * j + 1, lay.qr.start + l, -1.0)
        coef = branch_coeffs(br)
        lifted = (W + i, W + j, lay.c.start + l, lay.s.start + l)
        for q, (blk, row) in enumerate(
            ((lay.ps, coef.ps), (lay.pr, coef.pr), (lay.qs, coef.qs), (lay.qr, coef.qr))
        ):
            r = 2 * nb + 4 * l + q
            put(r, blk.start + l, 1.0)
            for col, a in zip(lifted, row):
                put(r, col, -a)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * nb + 4 * nl, lay.size))
    A.sum_duplicates()

    cones = []
    for l, br in enumerate(network.branches):
        i, j = idx(br.f_bus), idx(br.t_bus)
        cones.append(
            ConeBlock(
                JABR,
                l,
                Slot(W + i, 0.5),
                Slot(W + j, 1.0),
                (Slot(lay.c.start + l), Slot(lay.s.start + l)),
            )
        )
    for kind, pblk, qblk in ((SEND, lay.ps, lay.qs), (RECV, lay.pr, lay.qr)):
        for l, br in enumerate(network.branches):
            cones.append(
                ConeBlock(
                    kind,
                    l,
                    Slot(None, const=0.5),
                    Slot(None, const=br.rate_a**2),
                    (Slot(pblk.start + l), Slot(qblk.start + l)),
                )
            )
    cost_gens = np.array([k for k, g in enumerate(network.generators) if g.c2 > 0], dtype=int)
    cones.append(
        ConeBlock(
            COST,
            None,
            Slot(None, const=0.5),
            Slot(lay.t.start),
            tuple(Slot(PG + k, math.sqrt(network.generators[k].c2)) for k in cost_gens),
        )
    )

    m = np.zeros(lay.size)
    m[lay.t] = 1.0
    m[lay.pg] = [g.c1 for g in network.generators]
    lo, hi = default_bounds(network)
    return PrimalModel(
        layout=lay,
        lower=lo,
        upper=hi,
        A=A,
        b=b,
        cones=cones,
        m=m,
        constant_cost=network.constant_cost,
        cost_gens=cost_gens,
    )
