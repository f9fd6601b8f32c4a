"""First-order maximization of the reduced all-tight dual.

The reduced dual variable is ``z = (lam, s2, vec, cost_vec)`` with ``s2 >= 0``
as the only constraint.  Its objective ``D(z)`` equals
``min_{lo <= x <= hi} Phi(x, z)`` where ``Phi`` is linear in ``x`` and concave
in ``z``, so two engines are offered:

``pdhg`` (default)
    primal-dual hybrid gradient on ``Phi``: a projected step on ``x`` and an
    exact proximal step on ``z``, which separates into a linear update of
    ``lam``, a closed form for the cost cone and one cubic per 4-dim cone.
``subgradient``
    projected supergradient ascent on ``D`` with constant, AdaGrad or Polyak
    steps, optionally on a pseudo-Huber smoothing of the l1 term.

Both only ever clamp ``s2`` at zero, and both report the best exact ``D``.
"""

from __future__ import annotations

import logging
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .canon import CanonicalProblem
from .dual import DualPoint, dualnorm_flat, pack, unpack

__all__ = [
    "SolveConfig",
    "SolveReport",
    "NumericalFailure",
    "NlpSpec",
    "warm_start",
    "solve_atd",
    "export_nlp",
    "cone_prox",
]

log = logging.getLogger(__name__)

TOLERANCE, ITERATION_LIMIT = "tolerance", "iteration-limit"
STEP_RULES = ("constant", "adagrad", "polyak")
METHODS = ("pdhg", "subgradient")


class NumericalFailure(FloatingPointError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message if dump_path is None else f"{message} (iterate dump: {dump_path})")
        self.dump_path = dump_path


@dataclass(frozen=True)
class SolveConfig:
    eps: float = 1e-6
    max_iter: int = 20000
    method: str = "pdhg"
    # subgradient engine
    step_rule: str = "adagrad"
    step_size: float = 1.0
    polyak_target: float | None = None
    smoothing: float = 0.0
    # pdhg engine; None picks ||m|| / ||b||
    primal_weight: float | None = None
    restart_every: int = 0
    # stopping
    tol_rel: float = 1e-8
    patience: int = 2000
    eval_every: int = 50
    seed: int = 0
    init_noise: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.tol_rel <= 0:
            raise ValueError("tol_rel must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.step_rule == "polyak" and self.method == "subgradient" and self.polyak_target is None:
            raise ValueError("polyak step rule needs polyak_target")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be positive")


@dataclass
class SolveReport:
    raw_objective: float
    objective: float
    point: DualPoint
    iterations: int
    reason: str
    trace: list[tuple[int, float]] = field(default_factory=list)
    primal: np.ndarray | None = None
    elapsed: float = 0.0
    eps: float = 0.0


def warm_start(problem: CanonicalProblem) -> DualPoint:
    """All-zero multipliers with every ``s2 = 1``."""
    p = DualPoint.zeros(problem)
    p.s2[:] = 1.0
    return p


# ---------------------------------------------------------------------------
# per-cone proximal step


def cone_prox(a, b, c, v0, s0, tv, ts, eps, newton_iters=80):
    """Maximize ``-a|v|^2/(2s+eps) - b s - c.v - |v-v0|^2/(2tv) - (s-s0)^2/(2ts)`` over ``s >= 0``.

    Vectorized over cones (rows).  With ``q = 2s + eps + 2 a tv`` the
    optimality condition is the cubic ``q^2 (q + beta) = C``, solved by
    Newton from the right, where the cubic is convex and the iteration is
    monotone.
    """
    a = np.maximum(a, 0.0)
    p = v0 - tv[:, None] * c
    p2 = np.sum(p * p, axis=1)
    qmin = 2.0 * a * tv + eps
    beta = 2.0 * ts * b - qmin - 2.0 * s0
    big_c = 4.0 * ts * a * p2
    q = np.maximum(np.maximum(-beta, 0.0) + np.cbrt(big_c), qmin)
    for _ in range(newton_iters):
        h = q * q * (q + beta) - big_c
        dh = q * (3.0 * q + 2.0 * beta)
        step = np.divide(h, dh, out=np.zeros_like(h), where=dh > 0)
        q = np.maximum(q - step, qmin)
        if np.all(np.abs(step) <= 1e-15 * q):
            break
    s = np.maximum(0.5 * (q - qmin), 0.0)
    u = 2.0 * s + eps
    ratio = np.divide(u, u + 2.0 * a * tv, out=np.zeros_like(u), where=u > 0)
    return s, p * ratio[:, None]


# ---------------------------------------------------------------------------
# engines


class _Tracker:
    """Running best, decimated trace and the patience-based stopping rule."""

    def __init__(self, cfg: SolveConfig, offset: float):
        self.cfg = cfg
        self.offset = offset
        self.best = -np.inf
        self.best_z = None
        self.trace: list[tuple[int, float]] = []
        self.marks: list[tuple[int, float]] = []

    def offer(self, it: int, value: float, z: np.ndarray) -> None:
        if not np.isfinite(value):
            path = _dump(z, it)
            raise NumericalFailure(f"non-finite objective at iteration {it}", path)
        if value > self.best:
            self.best = value
            self.best_z = z.copy()

    def checkpoint(self, it: int) -> bool:
        """Record the trace; return True when progress stalled over ``patience``."""
        self.trace.append((it, self.best + self.offset))
        self.marks.append((it, self.best))
        old = [v for i, v in self.marks if i <= it - self.cfg.patience]
        if not old:
            return False
        self.marks = [(i, v) for i, v in self.marks if i > it - self.cfg.patience - self.cfg.eval_every]
        ref = old[-1]
        return self.best - ref <= self.cfg.tol_rel * max(abs(self.best), 1.0)


def _dump(z: np.ndarray, it: int) -> str:
    with tempfile.NamedTemporaryFile(prefix="tightdual-iterate-", suffix=".npz", delete=False) as f:
        np.savez(f, z=z, iteration=it)
        return f.name


def _sizes(problem):
    ne, n4 = problem.n_eq, problem.n_cone4
    return ne, n4, ne + 3 * n4 + problem.cost_dim


def _lower_z(problem):
    ne, n4, nz = _sizes(problem)
    lo = np.full(nz, -np.inf)
    lo[ne : ne + n4] = 0.0
    return lo


def _full_cones(z, problem, eps):
    ne, n4, _ = _sizes(problem)
    off = problem.cost_offset
    s2 = z[ne : ne + n4]
    vec = z[ne + n4 : ne + 3 * n4].reshape(n4, 2)
    cv = z[ne + 3 * n4 :]
    d = np.empty(problem.g.size)
    four = d[:off].reshape(n4, 4)
    four[:, 0] = np.sum(vec * vec, axis=1) / (2.0 * s2 + eps) if eps > 0 else _safe_r(vec, s2)
    four[:, 1] = s2
    four[:, 2:] = vec
    d[off] = 0.5 * float(cv @ cv)
    d[off + 1] = 1.0
    d[off + 2 :] = cv
    return d


def _safe_r(vec, s2):
    num = np.sum(vec * vec, axis=1)
    return np.divide(num, 2.0 * s2, out=np.zeros_like(num), where=s2 > 0)


def _initial(problem, cfg, start):
    z = pack(start if start is not None else warm_start(problem))
    if cfg.init_noise > 0:
        rng = np.random.default_rng(cfg.seed)
        z = z + cfg.init_noise * rng.standard_normal(z.size)
    return np.maximum(z, _lower_z(problem))


def _steps(problem):
    """Diagonal (Pock-Chambolle, alpha = 1) step sizes for x and z."""
    ne, n4, nz = _sizes(problem)
    off = problem.cost_offset
    F = problem.F
    rows4 = np.arange(n4) * 4
    K = sp.vstack(
        [problem.A, F[rows4 + 1], F[rows4 + 2], F[rows4 + 3], F[off + 2 :], F[rows4]]
    ).tocsr()
    absk = abs(K)
    row = np.asarray(absk.sum(axis=1)).ravel()
    col = np.asarray(absk.sum(axis=0)).ravel()
    tau = 1.0 / np.maximum(col, 1e-12)
    sig = 1.0 / np.maximum(row, 1e-12)
    sig_vec = np.minimum(sig[ne + n4 : ne + 2 * n4], sig[ne + 2 * n4 : ne + 3 * n4])
    sig_z = np.concatenate(
        [sig[: ne + n4], np.repeat(sig_vec, 2), sig[ne + 3 * n4 : nz]]
    )
    return tau, sig_z


def default_primal_weight(problem: CanonicalProblem) -> float:
    nm, nb = np.linalg.norm(problem.m), np.linalg.norm(problem.b)
    if nm == 0 or nb == 0:
        return 1.0
    return float(nm / nb)


def _solve_pdhg(problem, cfg, z, tracker):
    ne, n4, nz = _sizes(problem)
    off = problem.cost_offset
    eps = cfg.eps
    tau0, sig0 = _steps(problem)
    w = cfg.primal_weight or default_primal_weight(problem)
    tau, sig = tau0 / w, sig0 * w
    sig_s2 = sig[ne : ne + n4]
    sig_v = sig[ne + n4 : ne + 3 * n4 : 2]
    sig_c = sig[ne + 3 * n4 :]
    lo, hi = problem.lower, problem.upper
    x = np.clip(problem.omega, lo, hi)
    x[0] = lo[0]
    zsum = np.zeros(nz)
    xsum = np.zeros_like(x)
    count = 0
    it = 0
    reason = ITERATION_LIMIT
    for it in range(1, cfg.max_iter + 1):
        gamma = problem.m + problem.AT @ z[:ne] - problem.FT @ _full_cones(z, problem, eps)
        x_new = np.clip(x - tau * gamma, lo, hi)
        x_bar = 2.0 * x_new - x
        x = x_new

        zn = np.empty(nz)
        zn[:ne] = z[:ne] + sig[:ne] * (problem.A @ x_bar + problem.b)
        u = problem.F @ x_bar + problem.g
        u4 = u[:off].reshape(n4, 4)
        s2, vec = cone_prox(
            u4[:, 0],
            u4[:, 1],
            u4[:, 2:],
            z[ne + n4 : ne + 3 * n4].reshape(n4, 2),
            z[ne : ne + n4],
            sig_v,
            sig_s2,
            eps,
        )
        zn[ne : ne + n4] = s2
        zn[ne + n4 : ne + 3 * n4] = vec.ravel()
        zn[ne + 3 * n4 :] = (z[ne + 3 * n4 :] / sig_c - u[off + 2 :]) / (1.0 / sig_c + 0.5)
        z = zn
        zsum += z
        xsum += x
        count += 1

        if it % cfg.eval_every == 0 or it == cfg.max_iter:
            avg = zsum / count
            v_cur = dualnorm_flat(z, eps, problem)[0]
            v_avg = dualnorm_flat(avg, eps, problem)[0]
            tracker.offer(it, v_cur, z)
            tracker.offer(it, v_avg, avg)
            if cfg.restart_every and it % cfg.restart_every == 0:
                if v_avg > v_cur:
                    z, x = avg, xsum / count
                zsum[:] = 0.0
                xsum[:] = 0.0
                count = 0
            if tracker.checkpoint(it):
                reason = TOLERANCE
                break
    return it, reason, x


def _solve_subgradient(problem, cfg, z, tracker):
    lower = _lower_z(problem)
    acc = np.zeros_like(z)
    it = 0
    reason = ITERATION_LIMIT
    for it in range(1, cfg.max_iter + 1):
        nu = cfg.smoothing / np.sqrt(it) if cfg.smoothing > 0 else 0.0
        value, grad = dualnorm_flat(z, cfg.eps, problem, smooth=nu)
        if nu > 0:
            exact = dualnorm_flat(z, cfg.eps, problem)[0]
        else:
            exact = value
        tracker.offer(it, exact, z)
        if cfg.step_rule == "constant":
            step = cfg.step_size * grad
        elif cfg.step_rule == "adagrad":
            acc += grad * grad
            step = cfg.step_size * np.divide(grad, np.sqrt(acc), out=np.zeros_like(grad), where=acc > 0)
        else:
            gg = float(grad @ grad)
            target = cfg.polyak_target - problem.constant_cost
            step = (max(target - exact, 0.0) / gg) * grad if gg > 0 else 0.0 * grad
        z = np.maximum(z + step, lower)
        if (it % cfg.eval_every == 0 or it == cfg.max_iter) and tracker.checkpoint(it):
            reason = TOLERANCE
            break
    tracker.offer(it, dualnorm_flat(z, cfg.eps, problem)[0], z)
    return it, reason, None


def solve_atd(problem: CanonicalProblem, config: SolveConfig | None = None, start: DualPoint | None = None) -> SolveReport:
    """Maximize the reduced all-tight dual objective from ``start`` (default :func:`warm_start`)."""
    cfg = config or SolveConfig()
    t0 = time.perf_counter()
    z = _initial(problem, cfg, start)
    tracker = _Tracker(cfg, problem.constant_cost)
    tracker.offer(0, dualnorm_flat(z, cfg.eps, problem)[0], z)
    if cfg.method == "pdhg":
        it, reason, x = _solve_pdhg(problem, cfg, z, tracker)
    else:
        it, reason, x = _solve_subgradient(problem, cfg, z, tracker)
    point = unpack(tracker.best_z, problem)
    raw = dualnorm_flat(tracker.best_z, cfg.eps, problem)[0]
    log.info("%s: %d iterations, best %.6f (%s)", cfg.method, it, raw + problem.constant_cost, reason)
    return SolveReport(
        raw_objective=raw,
        objective=raw + problem.constant_cost,
        point=point,
        iterations=it,
        reason=reason,
        trace=tracker.trace,
        primal=x,
        elapsed=time.perf_counter() - t0,
        eps=cfg.eps,
    )


# ---------------------------------------------------------------------------
# callback bundle for external NLP solvers


class NlpSpec:
    """All-tight dual in equality form for barrier / SQP solvers.

    Variables ``z = (lam, mu, s2, vec, cost_vec)``; maximize
    ``lam'b + mu'd - r(d, eps)'g`` subject to
    ``m + A'lam + C'mu - F'r(d, eps) = 0`` with ``mu >= 0`` and ``s2 >= 0``.
    Method names follow the cyipopt problem protocol (``objective``,
    ``gradient``, ``constraints``, ``jacobianstructure``, ``jacobian``);
    solvers that minimize should negate objective and gradient.
    """

    sense = "maximize"

    def __init__(self, problem: CanonicalProblem, eps: float):
        self.problem = problem
        self.eps = float(eps)
        p = problem
        self.n_lam = p.n_eq
        self.n_mu = 2 * p.n
        self.n_cone4 = p.n_cone4
        self.n_d = 3 * p.n_cone4 + p.cost_dim
        self.n_var = self.n_lam + self.n_mu + self.n_d
        self.n_con = p.n
        self.lower = np.full(self.n_var, -np.inf)
        self.upper = np.full(self.n_var, np.inf)
        self.lower[self.n_lam : self.n_lam + self.n_mu] = 0.0
        s0 = self.n_lam + self.n_mu
        self.lower[s0 : s0 + p.n_cone4] = 0.0
        self.constraint_lower = np.zeros(self.n_con)
        self.constraint_upper = np.zeros(self.n_con)
        struct = self._jacobian_matrix(np.ones(self.n_var), structural=True).tocoo()
        self._rows, self._cols = struct.row.copy(), struct.col.copy()

    # -- pieces ------------------------------------------------------------
    def _split(self, z):
        a, b = self.n_lam, self.n_lam + self.n_mu
        return z[:a], z[a:b], z[b:]

    def _reduced(self, zd):
        n4 = self.n_cone4
        return zd[:n4], zd[n4 : 3 * n4].reshape(n4, 2), zd[3 * n4 :]

    def _full(self, zd):
        lam0 = np.zeros(self.n_lam)
        return _full_cones(np.concatenate([lam0, zd]), self.problem, self.eps)

    def _r_jacobian(self, zd, structural=False):
        """Sparse d(full cone vector)/d(reduced cone variables)."""
        p = self.problem
        n4, k = self.n_cone4, p.cost_dim
        s2, vec, cv = self._reduced(zd)
        den = 2.0 * s2 + self.eps
        safe = np.where(den > 0, den, 1.0)
        rows, cols, vals = [], [], []
        for i in range(n4):
            r = 4 * i
            if structural:
                ds2, dv = 1.0, (1.0, 1.0)
            else:
                ds2 = -2.0 * float(vec[i] @ vec[i]) / safe[i] ** 2
                dv = 2.0 * vec[i] / safe[i]
            rows += [r, r, r, r + 1, r + 2, r + 3]
            cols += [i, n4 + 2 * i, n4 + 2 * i + 1, i, n4 + 2 * i, n4 + 2 * i + 1]
            vals += [ds2, dv[0], dv[1], 1.0, 1.0, 1.0]
        off = p.cost_offset
        for j in range(k):
            rows += [off, off + 2 + j]
            cols += [3 * n4 + j, 3 * n4 + j]
            vals += [1.0 if structural else cv[j], 1.0]
        return sp.csr_matrix((vals, (rows, cols)), shape=(p.g.size, self.n_d))

    def _jacobian_matrix(self, z, structural=False):
        p = self.problem
        _, _, zd = self._split(z)
        jr = self._r_jacobian(zd, structural)
        FT = abs(p.FT) if structural else p.FT
        AT = abs(p.AT) if structural else p.AT
        CT = abs(p.C.T) if structural else p.C.T
        return sp.hstack([AT, CT, -(FT @ jr)]).tocsr()

    # -- protocol ----------------------------------------------------------
    def objective(self, z):
        lam, mu, zd = self._split(np.asarray(z, dtype=float))
        p = self.problem
        return float(lam @ p.b + mu @ p.d - self._full(zd) @ p.g)

    def gradient(self, z):
        lam, mu, zd = self._split(np.asarray(z, dtype=float))
        p = self.problem
        g_d = -(self._r_jacobian(zd).T @ p.g)
        return np.concatenate([p.b, p.d, g_d])

    def constraints(self, z):
        lam, mu, zd = self._split(np.asarray(z, dtype=float))
        p = self.problem
        return p.m + p.AT @ lam + p.C.T @ mu - p.FT @ self._full(zd)

    def jacobianstructure(self):
        return self._rows, self._cols

    def jacobian(self, z):
        J = self._jacobian_matrix(np.asarray(z, dtype=float))
        return np.asarray(J[self._rows, self._cols]).ravel()

    def jacobian_dense(self, z):
        J = np.zeros((self.n_con, self.n_var))
        J[self._rows, self._cols] = self.jacobian(z)
        return J


def export_nlp(problem: CanonicalProblem, eps: float) -> NlpSpec:
    return NlpSpec(problem, eps)
