"""Acceptance suite: one recorded pass/fail line per criterion.

The summary is printed at the end of the pytest run under
"acceptance criteria".  Printed reference objectives carry two decimals, so
"f_clb <= reference" comparisons allow half a unit in the last printed place.
"""

import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from tightdual.certify import certify, clb_value, eps_sweep, face_project
from tightdual.dual import DualPoint, cone_slacks, dualnorm_flat, pack, replace, unpack
from tightdual.fosolve import SolveConfig, export_nlp, solve_atd
from tightdual.jabr import branch_coeffs
from tightdual.netio import read_case

from conftest import case_path
from oracles import RELAXATION_OPTIMUM, complex_flows, two_bus_ac_cost

ROUND = 0.005  # half a cent: references are printed to two decimals


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


def settle(criterion, cid, checks: dict, extra=""):
    failed = [name for name, ok in checks.items() if not ok]
    detail = "; ".join(checks) if not failed else "failed: " + "; ".join(failed)
    criterion(cid, not failed, f"{detail}{' | ' + extra if extra else ''}")
    assert not failed, failed


def random_reduced(problem, rng, scale=1.0, s2_low=0.1):
    p = DualPoint.zeros(problem)
    p.lam = scale * rng.standard_normal(problem.n_eq)
    p.s2 = rng.uniform(s2_low, 2.0, problem.n_cone4) * scale
    p.vec = scale * rng.standard_normal((problem.n_cone4, 2))
    p.cost_vec = scale * rng.standard_normal(problem.cost_dim)
    return p


# ---------------------------------------------------------------------------
# 1-4: published reference objectives


def test_criterion_1_case3(criterion, solved_case3):
    obj = solved_case3.report.objective
    clb = solved_case3.bound.f_clb
    checks = {
        f"ATD objective {obj:.4f} within 0.5% of 5736.18": within(obj, 5736.18, 0.005),
        f"f_clb {clb:.4f} within 0.5% of 5735.76": within(clb, 5735.76, 0.005),
        "f_clb <= 5736.17*(1+1e-6)": clb <= 5736.17 * (1 + 1e-6),
        f"runtime {solved_case3.elapsed:.1f}s <= 60s": solved_case3.elapsed <= 60,
    }
    settle(criterion, "1", checks)


def test_criterion_2_case14(criterion, solved_case14):
    obj = solved_case14.report.objective
    clb = solved_case14.bound.f_clb
    checks = {
        f"ATD objective {obj:.4f} within 1% of 2175.73": within(obj, 2175.73, 0.01),
        f"f_clb {clb:.4f} <= 2175.70 (+{ROUND} rounding)": clb <= 2175.70 + ROUND,
        "f_clb <= conic optimum of this relaxation": clb <= RELAXATION_OPTIMUM["case14_ieee"] * (1 + 1e-9),
        "f_clb within 1% of 2175.63": within(clb, 2175.63, 0.01),
        f"runtime {solved_case14.elapsed:.1f}s <= 120s": solved_case14.elapsed <= 120,
    }
    settle(criterion, "2", checks)


def test_criterion_3_case57(criterion, problems):
    prob = problems("case57_ieee")
    t0 = time.perf_counter()
    rep = solve_atd(prob, SolveConfig(max_iter=40000))
    bound = certify(rep.point, prob)
    elapsed = time.perf_counter() - t0
    clb = bound.f_clb
    sound = clb <= 37529.70 + ROUND
    converged = within(clb, 37529.68, 0.01) and elapsed <= 600
    note = f"f_clb {clb:.3f}, {rep.iterations} iterations, {elapsed:.0f}s"
    if not converged:
        warnings.warn(f"case57 did not reach 1% of 37529.68 within 10 min ({note})")
    checks = {
        f"f_clb <= 37529.70 (+{ROUND} rounding)": sound,
        "f_clb <= conic optimum of this relaxation": clb <= RELAXATION_OPTIMUM["case57_ieee"] * (1 + 1e-9),
    }
    extra = note + ("; within 1% of 37529.68 inside 10 min" if converged else "; convergence WARNING")
    settle(criterion, "3", checks, extra)


def test_criterion_4_eps_sweep(criterion, problems):
    prob = problems("case14_ieee")
    eps_list = [1e-8, 1e-6, 1e-4, 1e-2, 1.0]
    rows = eps_sweep(prob, eps_list, SolveConfig(max_iter=20000))
    obj = [r.objective for r in rows]
    clb = [r.f_clb for r in rows]
    monotone = all(b >= a * (1 - 5e-4) for a, b in zip(obj, obj[1:]))
    checks = {
        "objectives nondecreasing in eps within 0.05%": monotone,
        f"max f_clb {max(clb):.4f} <= 2175.70 (+{ROUND})": max(clb) <= 2175.70 + ROUND,
        "no failed rows": all(not r.status.startswith("error") for r in rows),
    }
    settle(criterion, "4", checks, "objectives " + ", ".join(f"{v:.3f}" for v in obj))


# ---------------------------------------------------------------------------
# 5: property suites


def test_criterion_5_1_canon_identities(criterion, problems):
    prob = problems("case14_ieee")
    rng = np.random.default_rng(51)
    n = prob.n

    worst = 0.0
    for _ in range(100):
        x = rng.uniform(prob.lower - 1, prob.upper + 1)
        lam = rng.standard_normal(prob.n_eq)
        mu = rng.uniform(0, 1, 2 * n)
        d = rng.standard_normal(prob.g.size)
        lhs = prob.m @ x + lam @ (prob.A @ x + prob.b) + mu @ (prob.C @ x + prob.d) - d @ (prob.F @ x + prob.g)
        gamma = prob.m + prob.AT @ lam + prob.C.T @ mu - prob.FT @ d
        rhs = gamma @ x + lam @ prob.b + mu @ prob.d - d @ prob.g
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    lagrangian = worst <= 1e-10

    inside = rng.uniform(prob.lower, prob.upper, size=(500, n))
    outside = inside.copy()
    k = rng.integers(0, n, size=500)
    push = rng.choice([-1.0, 1.0], size=500)
    outside[np.arange(500), k] = np.where(push > 0, prob.upper[k], prob.lower[k]) + push * rng.uniform(1e-6, 1.0, 500)
    box_ok = True
    for x in np.vstack([inside, outside]):
        rows = np.all(prob.C @ x + prob.d <= 0)
        box = np.all((prob.lower <= x) & (x <= prob.upper))
        box_ok &= bool(rows == box)

    d = np.zeros(prob.g.size)
    for span in prob.cone_layout:
        d[span.start] = d[span.start + 1] = 1.0
    rates = [br.rate_a for br in read_case(case_path("case14_ieee")).branches]
    expected = -2 * sum(0.5 + r**2 for r in rates) - 0.5
    audit = abs(-(d @ prob.g) - expected) <= 1e-10 * abs(expected)

    checks = {
        f"Lagrangian identity (worst rel {worst:.1e})": lagrangian,
        "box equivalence on 1000 points": box_ok,
        "constant-term audit": audit,
    }
    settle(criterion, "5.1", checks)


def test_criterion_5_2_tightness(criterion, problems):
    prob = problems("case14_ieee")
    rng = np.random.default_rng(52)
    worst_proj = 0.0
    eps_negative = True
    for _ in range(50):
        p = random_reduced(prob, rng, scale=rng.uniform(0.01, 100), s2_low=0.0)
        p.s2[rng.random(prob.n_cone4) < 0.2] = rng.uniform(0, 1e-9)
        out = face_project(p)
        sl = cone_slacks(out)
        scale = np.maximum(1.0, np.append(np.sum(out.vec**2, axis=1), out.cost_vec @ out.cost_vec))
        worst_proj = max(worst_proj, float(np.max(np.abs(sl) / scale)))
        for eps in (1e-6, 1e-2, 1.0):
            full = replace(p, eps)
            nz = np.sum(p.vec**2, axis=1) > 0
            eps_negative &= bool(np.all(cone_slacks(full)[:-1][nz] < 0))
    checks = {
        f"post-projection slacks zero (worst rel {worst_proj:.1e} <= 1e-12)": worst_proj <= 1e-12,
        "eps > 0 slacks strictly negative when vec != 0": eps_negative,
    }
    settle(criterion, "5.2", checks)


def test_criterion_5_3_derivatives(criterion, problems):
    prob = problems("case3_lmbd")
    rng = np.random.default_rng(53)
    eps, h = 1e-6, 1e-7

    worst_grad, tried = 0.0, 0
    while tried < 100:
        z = pack(random_reduced(prob, rng, scale=1.0, s2_low=0.2))
        d = rng.standard_normal(z.size)
        d /= np.linalg.norm(d)
        full = replace(unpack(z, prob), eps)
        gamma = prob.m + prob.AT @ full.lam - prob.FT @ full.flat_cones()
        # gamma_t = 1 - d_t2 is identically zero and does not move with z
        if np.min(np.abs(gamma[1:])) <= 1e-6:
            continue
        tried += 1
        _, g = dualnorm_flat(z, eps, prob)
        fd = (dualnorm_flat(z + h * d, eps, prob)[0] - dualnorm_flat(z - h * d, eps, prob)[0]) / (2 * h)
        worst_grad = max(worst_grad, abs(fd - g @ d) / max(1.0, abs(g @ d)))

    # the NLP objective carries box constants of size t_max; a wider step keeps roundoff down
    h = 1e-5
    nlp = export_nlp(prob, eps)
    worst_jac = 0.0
    worst_obj = 0.0
    for _ in range(100):
        z = rng.standard_normal(nlp.n_var)
        lo = np.isfinite(nlp.lower)
        z[lo] = rng.uniform(0.2, 2.0, lo.sum())
        d = rng.standard_normal(nlp.n_var)
        d /= np.linalg.norm(d)
        jd = nlp.jacobian_dense(z) @ d
        fd = (nlp.constraints(z + h * d) - nlp.constraints(z - h * d)) / (2 * h)
        worst_jac = max(worst_jac, np.max(np.abs(fd - jd)) / max(1.0, np.max(np.abs(jd))))
        gd = nlp.gradient(z) @ d
        fo = (nlp.objective(z + h * d) - nlp.objective(z - h * d)) / (2 * h)
        worst_obj = max(worst_obj, abs(fo - gd) / max(1.0, abs(gd)))
    checks = {
        f"dual-norm supergradient vs central FD (worst rel {worst_grad:.1e})": worst_grad <= 1e-5,
        f"NLP Jacobian vs central FD (worst rel {worst_jac:.1e})": worst_jac <= 1e-5,
        f"NLP gradient vs central FD (worst rel {worst_obj:.1e})": worst_obj <= 1e-5,
    }
    settle(criterion, "5.3", checks)


def test_criterion_5_4_weak_duality_two_bus(criterion, problems, solved_two_bus):
    prob = problems("two_bus")
    oracle = two_bus_ac_cost(read_case(case_path("two_bus")))
    rng = np.random.default_rng(54)
    bounds = []
    for _ in range(50):
        p = random_reduced(prob, rng, scale=10 ** rng.uniform(-2, 3), s2_low=0.0)
        bounds.append(certify(p, prob).f_clb)
    best = solved_two_bus.bound.f_clb
    checks = {
        f"50 random points: max f_clb {max(bounds):.3f} <= oracle {oracle:.4f}": max(bounds) <= oracle,
        f"converged f_clb {best:.6f} <= oracle": best <= oracle * (1 + 1e-12),
    }
    settle(criterion, "5.4", checks)


def test_criterion_5_5_lemma_checks(criterion, solved_case3, solved_case14):
    checks = {}
    for label, solved in (("case3", solved_case3), ("case14", solved_case14)):
        prob, rep = solved.problem, solved.report
        full = replace(rep.point, rep.eps)
        cv = full.cost_vec @ full.cost_vec

        def neg(alpha):
            q = full.copy()
            q.cost_s2 = alpha
            q.cost_s1 = cv / (2 * alpha)
            return -clb_value(q.lam, q, prob)

        grid = np.linspace(0.5, 1.5, 1001)
        profile = np.array([-neg(a) for a in grid])
        top = -neg(1.0)
        attains = top >= profile.max() - 1e-9 * max(1.0, abs(top))
        if cv > 0:
            # strictly concave below 1: the maximizer is unique
            best = minimize_scalar(neg, bounds=(0.5, 1.5), method="bounded", options={"xatol": 1e-10}).x
            checks[f"{label}: argmax cost scalar2 = {best:.6f}, |d-1| <= 1e-4"] = abs(best - 1) <= 1e-4 and attains
        else:
            # no quadratic costs: profile is flat on [0, 1], and 1 must still be a maximizer
            checks[f"{label}: no quadratic costs, cost scalar2 = 1 attains the profile max"] = attains
        slack = np.max(np.abs(cone_slacks(solved.bound.point)))
        checks[f"{label}: post-projection |slack| {slack:.1e} <= 1e-8"] = slack <= 1e-8
    settle(criterion, "5.5", checks)


def test_criterion_5_6_branch_coeffs(criterion):
    rng = np.random.default_rng(56)
    worst = 0.0
    for name in ("two_bus", "case3_lmbd", "case14_ieee", "case57_ieee", "case118_ieee"):
        net = read_case(case_path(name))
        mags = rng.uniform(0.9, 1.1, size=(100, 2))
        angs = rng.uniform(-0.6, 0.6, size=(100, 2))
        vf = mags[:, 0] * np.exp(1j * angs[:, 0])
        vt = mags[:, 1] * np.exp(1j * angs[:, 1])
        prod = vf * vt.conj()
        for br in net.branches:
            ps, pr, qs, qr = branch_coeffs(br).evaluate(abs(vf) ** 2, abs(vt) ** 2, prod.real, prod.imag)
            for k in range(100):
                sf, st = complex_flows(br.r, br.x, br.b_charge, br.tap, br.shift, vf[k], vt[k])
                scale = max(1.0, abs(sf), abs(st))
                err = max(abs(complex(ps[k], qs[k]) - sf), abs(complex(pr[k], qr[k]) - st)) / scale
                worst = max(worst, err)
    settle(criterion, "5.6", {f"worst relative flow error {worst:.1e} <= 1e-12": worst <= 1e-12})


# ---------------------------------------------------------------------------
# 6: optional soundness on a large case


def test_criterion_6_case500_soundness(criterion, problems):
    path = case_path("case500_goc")
    if not path.exists():
        pytest.skip("case500 file not supplied")
    prob = problems("case500_goc")
    rep = solve_atd(prob, SolveConfig(max_iter=3000))
    clb = certify(rep.point, prob).f_clb
    settle(criterion, "6", {f"f_clb {clb:.2f} <= 453838.14": clb <= 453838.14 + ROUND}, "no convergence requirement")
