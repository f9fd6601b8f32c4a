"""Command-line front end: ``tightdual solve | sweep | bench``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from .canon import canonicalize
from .certify import DEFAULT_DELTA, certify, eps_sweep, sweep_csv
from .dual import acd_eval, recover_mu, ttd_eval
from .fosolve import NumericalFailure, SolveConfig, solve_atd
from .jabr import build_primal
from .netio import CaseFormatError, read_case

log = logging.getLogger("tightdual")

LOG_ENV = "TIGHTDUAL_LOG"
FORMULATIONS = ("atd", "ttd-eval", "acd-eval")
DEFAULT_EPS_LIST = "1e-8,1e-6,1e-4,1e-2,1"

# SOC relaxation optima of the PGLib v23.07 cases (conic interior-point reference)
REFERENCES = {
    "case3_lmbd": 5736.17,
    "case14_ieee": 2175.70,
    "case57_ieee": 37529.70,
    "case118_ieee": 96335.84,
    "case300_ieee": 549244.23,
    "case500_goc": 453838.14,
}

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


@dataclass
class RunRecord:
    case: str
    formulation: str
    config: dict
    objective: float | None
    f_clb: float | None
    f_clb_raw: float | None
    reference: float | None
    gap_pct: float | None
    iterations: int
    wall_time: float
    projection_time: float
    reason: str
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


RECORD_KEYS = tuple(RunRecord.__dataclass_fields__)


def case_key(path: str | Path) -> str:
    stem = Path(path).stem
    return stem[len("pglib_opf_") :] if stem.startswith("pglib_opf_") else stem


def lookup_reference(path, table=None):
    return (table if table is not None else REFERENCES).get(case_key(path))


def _gap(value, reference):
    if value is None or reference is None:
        return None
    return 100.0 * (value - reference) / abs(reference)


def run_case(path, config: SolveConfig, delta=DEFAULT_DELTA, reference=None, formulation="atd") -> RunRecord:
    """Parse, solve, project and certify one case file.

    Raises on unreadable input or solver failure; :func:`_safe_run` turns
    those into failure records.
    """
    t0 = time.perf_counter()
    problem = canonicalize(build_primal(read_case(path)))
    rep = solve_atd(problem, config)
    bound = certify(rep.point, problem, delta=delta, reference=reference)
    objective = rep.objective
    if formulation != "atd":
        lam, full = bound.lam, bound.point
        mu = recover_mu(lam, full, problem)
        ev = ttd_eval if formulation == "ttd-eval" else acd_eval
        objective = ev(lam, mu, full, problem)[0] + problem.constant_cost
    return RunRecord(
        case=case_key(path),
        formulation=formulation,
        config={**asdict(config), "delta": delta},
        objective=objective,
        f_clb=bound.f_clb,
        f_clb_raw=bound.f_clb_raw,
        reference=reference,
        gap_pct=_gap(objective, reference),
        iterations=rep.iterations,
        wall_time=time.perf_counter() - t0,
        projection_time=bound.projection_time,
        reason=rep.reason,
    )


def _safe_run(args):
    path, config, delta, reference, formulation = args
    try:
        return run_case(path, config, delta, reference, formulation)
    except Exception as exc:
        log.error("%s: %s", path, exc)
        return RunRecord(
            case=case_key(path),
            formulation=formulation,
            config={**asdict(config), "delta": delta},
            objective=None,
            f_clb=None,
            f_clb_raw=None,
            reference=reference,
            gap_pct=None,
            iterations=0,
            wall_time=0.0,
            projection_time=0.0,
            reason="failed",
            error=f"{type(exc).__name__}: {exc}",
        )


def _config(ns) -> SolveConfig:
    return SolveConfig(
        eps=ns.eps,
        max_iter=ns.max_iter,
        tol_rel=ns.tol,
        seed=ns.seed,
        method=ns.method,
    )


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_solve(ns) -> int:
    try:
        config = _config(ns)
        ref = ns.reference if ns.reference is not None else lookup_reference(ns.case)
        rec = run_case(ns.case, config, ns.delta, ref, ns.formulation)
    except (OSError, CaseFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _write(json.dumps(rec.to_dict(), indent=2) + "\n", ns.out)
    return EXIT_OK


def cmd_sweep(ns) -> int:
    try:
        eps_list = [float(e) for e in ns.eps_list.split(",") if e.strip()]
        problem = canonicalize(build_primal(read_case(ns.case)))
    except (OSError, CaseFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        rows = eps_sweep(problem, eps_list, _config(ns), delta=ns.delta)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _write(sweep_csv(rows), ns.out)
    return EXIT_OK if all(not r.status.startswith("error") for r in rows) else EXIT_FAIL


def cmd_bench(ns) -> int:
    folder = Path(ns.directory)
    files = sorted(folder.glob("*.m")) if folder.is_dir() else []
    if not files:
        print(f"error: no .m case files in {folder}", file=sys.stderr)
        return EXIT_INPUT
    table = dict(REFERENCES)
    if ns.references:
        try:
            table.update({str(k): float(v) for k, v in json.loads(Path(ns.references).read_text()).items()})
        except (OSError, ValueError) as exc:
            print(f"error: references file: {exc}", file=sys.stderr)
            return EXIT_INPUT
    config = _config(ns)
    jobs = [(str(f), config, ns.delta, lookup_reference(f, table), ns.formulation) for f in files]
    if ns.workers > 1:
        with ProcessPoolExecutor(max_workers=ns.workers) as pool:
            records = list(pool.map(_safe_run, jobs))
    else:
        records = [_safe_run(j) for j in jobs]

    _write(json.dumps([r.to_dict() for r in records], indent=2) + "\n", ns.out)
    ok = [r for r in records if r.error is None]
    gaps = [r.gap_pct for r in ok if r.gap_pct is not None]
    mean_gap = sum(gaps) / len(gaps) if gaps else float("nan")
    mean_proj = sum(r.projection_time for r in ok) / len(ok) if ok else float("nan")
    print(
        f"{len(records)} cases, {len(ok)} certified, {len(records) - len(ok)} failed; "
        f"mean gap {mean_gap:.4f}%, mean projection time {mean_proj:.2e} s",
        file=sys.stderr,
    )
    return EXIT_OK if len(ok) == len(records) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--eps", type=float, default=1e-6)
    common.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    common.add_argument("--max-iter", type=int, default=SolveConfig.max_iter)
    common.add_argument("--tol", type=float, default=SolveConfig.tol_rel)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--method", choices=("pdhg", "subgradient"), default="pdhg")
    common.add_argument("--out", help="output path (default stdout)")

    p = argparse.ArgumentParser(prog="tightdual", description="Certified dual bounds for the SOC relaxation of ACOPF")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve and certify one case")
    s.add_argument("case")
    s.add_argument("--reference", type=float)
    s.add_argument("--formulation", choices=FORMULATIONS, default="atd")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", parents=[common], help="epsilon sweep to CSV")
    w.add_argument("case")
    w.add_argument("--eps-list", default=DEFAULT_EPS_LIST)
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", parents=[common], help="solve every case in a directory")
    b.add_argument("directory")
    b.add_argument("--references", help="JSON object mapping case name to reference objective")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--formulation", choices=FORMULATIONS, default="atd")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
