"""Dual evaluators: all-conic, t-tight and all-tight (dual-norm) forms.

A :class:`DualPoint` stores the cone multipliers as arrays over the
``n_cone4`` four-dimensional cones (``s1``, ``s2``, ``vec`` of shape
``(n_cone4, 2)``) plus the cost-epigraph tuple ``(cost_s1, cost_s2, cost_vec)``.
In reduced form ``s1`` and ``cost_s1`` are ``None``; they are implied by the
replacement function, and ``cost_s2`` is held at 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as _dc_replace

import numpy as np

from .canon import CanonicalProblem

__all__ = [
    "DualPoint",
    "SingularityError",
    "replace",
    "cone_slacks",
    "acd_eval",
    "ttd_eval",
    "dualnorm_objective",
    "dualnorm_flat",
    "recover_mu",
    "pack",
    "unpack",
]


class SingularityError(ZeroDivisionError):
    """Raised when ``r(z, 0)`` is evaluated with a zero denominator and nonzero numerator."""


@dataclass
class DualPoint:
    lam: np.ndarray
    s2: np.ndarray
    vec: np.ndarray
    cost_vec: np.ndarray
    s1: np.ndarray | None = None
    cost_s1: float | None = None
    cost_s2: float = 1.0
    mu: np.ndarray | None = None

    @property
    def is_full(self) -> bool:
        return self.s1 is not None and self.cost_s1 is not None

    @classmethod
    def zeros(cls, problem: CanonicalProblem, full: bool = False) -> "DualPoint":
        n4 = problem.n_cone4
        return cls(
            lam=np.zeros(problem.n_eq),
            s2=np.zeros(n4),
            vec=np.zeros((n4, 2)),
            cost_vec=np.zeros(problem.cost_dim),
            s1=np.zeros(n4) if full else None,
            cost_s1=0.0 if full else None,
        )

    def copy(self) -> "DualPoint":
        def c(a):
            return None if a is None else np.array(a, dtype=float, copy=True)

        return DualPoint(
            lam=c(self.lam),
            s2=c(self.s2),
            vec=c(self.vec),
            cost_vec=c(self.cost_vec),
            s1=c(self.s1),
            cost_s1=self.cost_s1,
            cost_s2=self.cost_s2,
            mu=c(self.mu),
        )

    def flat_cones(self) -> np.ndarray:
        """Full cone multiplier vector in ``F``/``g`` row order."""
        if not self.is_full:
            raise ValueError("flat_cones needs a full point; apply replace() first")
        four = np.column_stack([self.s1, self.s2, self.vec]).ravel()
        return np.concatenate([four, [self.cost_s1, self.cost_s2], self.cost_vec])

    @classmethod
    def from_flat_cones(cls, lam: np.ndarray, dflat: np.ndarray, problem: CanonicalProblem):
        off = problem.cost_offset
        four = dflat[:off].reshape(-1, 4)
        return cls(
            lam=np.asarray(lam, dtype=float),
            s1=four[:, 0].copy(),
            s2=four[:, 1].copy(),
            vec=four[:, 2:].copy(),
            cost_s1=float(dflat[off]),
            cost_s2=float(dflat[off + 1]),
            cost_vec=dflat[off + 2 :].copy(),
        )


# ---------------------------------------------------------------------------
# replacement and cone diagnostics


def _quad_over_lin(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    if np.any(~ok & (num > 0)):
        raise SingularityError("r(z, eps): scalar2 = 0 with eps = 0 and nonzero vector part")
    return out


def replace(point: DualPoint, eps: float) -> DualPoint:
    """Fill in the eliminated first scalars: ``s1 = |vec|^2 / (2 s2 + eps)``.

    The cost cone uses ``|cost_vec|^2 / 2`` with no ``eps``.
    """
    if np.any(point.s2 < 0):
        raise ValueError("replace: scalar2 must be nonnegative")
    out = _dc_replace(point)
    out.s1 = _quad_over_lin(np.sum(point.vec**2, axis=1), 2.0 * point.s2 + eps)
    out.cost_s1 = 0.5 * float(point.cost_vec @ point.cost_vec)
    return out


def cone_slacks(point: DualPoint) -> np.ndarray:
    """``2 d1 d2 - |dvec|^2`` per cone; the cost cone is the last entry."""
    four = 2.0 * point.s1 * point.s2 - np.sum(point.vec**2, axis=1)
    cost = 2.0 * point.cost_s1 * point.cost_s2 - float(point.cost_vec @ point.cost_vec)
    return np.append(four, cost)


# ---------------------------------------------------------------------------
# evaluators


def acd_eval(lam, mu, point: DualPoint, problem: CanonicalProblem):
    """All-conic dual objective ``lam'b + mu'd - d'g`` and stationarity residual."""
    d = point.flat_cones()
    obj = float(lam @ problem.b + mu @ problem.d - d @ problem.g)
    resid = problem.m + problem.AT @ lam + problem.C.T @ mu - problem.FT @ d
    return obj, resid


def ttd_eval(lam, mu, point: DualPoint, problem: CanonicalProblem):
    """Evaluate the t-tight dual: only the cost-cone first scalar is eliminated.

    Returns ``(objective, residual, flags)`` where ``flags[i]`` says whether
    four-dimensional cone ``i`` lies in the rotated cone.
    """
    if point.s1 is None:
        raise ValueError("ttd_eval needs explicit first scalars on the flow/Jabr cones")
    full = _dc_replace(point, cost_s1=0.5 * float(point.cost_vec @ point.cost_vec))
    obj, resid = acd_eval(lam, mu, full, problem)
    slack = cone_slacks(full)[:-1]
    scale = np.maximum(1.0, np.sum(point.vec**2, axis=1))
    flags = (point.s1 >= 0) & (point.s2 >= 0) & (slack >= -1e-12 * scale)
    return obj, resid, flags


def recover_mu(lam, point: DualPoint, problem: CanonicalProblem) -> np.ndarray:
    """Bound multipliers solving ``C'mu = F'd - A'lam - m`` with complementary pairs.

    Ordered as ``[upper-bound rows; lower-bound rows]`` to match ``C = [I; -I]``.
    """
    rho = problem.FT @ point.flat_cones() - problem.AT @ lam - problem.m
    return np.concatenate([np.maximum(rho, 0.0), np.maximum(-rho, 0.0)])


# ---------------------------------------------------------------------------
# all-tight dual-norm objective on a flat vector


def pack(point: DualPoint) -> np.ndarray:
    """Flatten a reduced point to ``z = (lam, s2, vec, cost_vec)``."""
    return np.concatenate([point.lam, point.s2, point.vec.ravel(), point.cost_vec])


def unpack(z: np.ndarray, problem: CanonicalProblem) -> DualPoint:
    ne, n4 = problem.n_eq, problem.n_cone4
    return DualPoint(
        lam=z[:ne].copy(),
        s2=z[ne : ne + n4].copy(),
        vec=z[ne + n4 : ne + 3 * n4].reshape(n4, 2).copy(),
        cost_vec=z[ne + 3 * n4 :].copy(),
    )


def dualnorm_flat(z: np.ndarray, eps: float, problem: CanonicalProblem, smooth: float = 0.0):
    """Value and supergradient of the reduced all-tight objective at flat ``z``.

    With ``smooth > 0`` each ``sigma_i |gamma_i|`` is replaced by the
    pseudo-Huber ``sigma_i (sqrt(gamma_i^2 + nu_i^2) - nu_i)`` with
    ``nu_i = smooth / sigma_i``; ``smooth = 0`` is the exact objective.
    """
    ne, n4 = problem.n_eq, problem.n_cone4
    lam = z[:ne]
    s2 = z[ne : ne + n4]
    vec = z[ne + n4 : ne + 3 * n4].reshape(n4, 2)
    cvec = z[ne + 3 * n4 :]

    den = 2.0 * s2 + eps
    vsq = np.sum(vec**2, axis=1)
    s1 = _quad_over_lin(vsq, den)
    off = problem.cost_offset
    d = np.empty(problem.g.size)
    four = d[:off].reshape(n4, 4)
    four[:, 0] = s1
    four[:, 1] = s2
    four[:, 2:] = vec
    d[off] = 0.5 * float(cvec @ cvec)
    d[off + 1] = 1.0
    d[off + 2 :] = cvec

    gamma = problem.m + problem.AT @ lam - problem.FT @ d
    sig = problem.sigma
    if smooth > 0:
        nu = smooth / sig
        root = np.sqrt(gamma**2 + nu**2)
        l1 = float(sig @ (root - nu))
        dsign = gamma / root
    else:
        l1 = float(sig @ np.abs(gamma))
        dsign = np.sign(gamma)
    value = -l1 + float(gamma @ problem.omega) + float(lam @ problem.b) - float(d @ problem.g)

    q = problem.omega - sig * dsign  # d value / d gamma
    g_lam = problem.A @ q + problem.b
    g_d = -(problem.F @ q) - problem.g
    gf = g_d[:off].reshape(n4, 4)
    safe = np.where(den > 0, den, 1.0)
    g_s1 = gf[:, 0]
    g_vec = gf[:, 2:] + (g_s1 * 2.0 / safe)[:, None] * vec
    g_s2 = gf[:, 1] - g_s1 * 2.0 * vsq / safe**2
    g_cvec = g_d[off + 2 :] + g_d[off] * cvec
    grad = np.concatenate([g_lam, g_s2, g_vec.ravel(), g_cvec])
    return value, grad


def dualnorm_objective(lam, point: DualPoint, eps: float, problem: CanonicalProblem):
    """Reduced all-tight objective and a supergradient, as a :class:`DualPoint`.

    ``lam`` overrides ``point.lam``.  The supergradient takes ``sign(0) = 0``.
    """
    p = _dc_replace(point, lam=np.asarray(lam, dtype=float))
    if np.any(p.s2 < 0):
        raise ValueError("dualnorm_objective: scalar2 must be nonnegative")
    value, grad = dualnorm_flat(pack(p), eps, problem)
    return value, unpack(grad, problem)
